"""Norms, compact convex bodies, Euclidean metric projections and diameters."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

from .errors import ConfigurationError, InputError, SolverError

NORM_KINDS = ("euclidean", "sum", "max")

GEOMETRIC_TOL = 1e-9
ALGEBRAIC_TOL = 1e-12

DYKSTRA_MAX_ITER = 10_000
DYKSTRA_TOL = 1e-10
WOLFE_GAP_TOL = 1e-9
# beyond this many candidate faces, hull projection switches to Wolfe's method
FACE_ENUMERATION_LIMIT = 20_000


@dataclass(frozen=True)
class NormSpec:
    kind: str = "euclidean"
    dimension: int = 2

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise InputError(f"unknown norm kind {self.kind!r}", kind=self.kind)
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise InputError("dimension must be a positive integer", dimension=self.dimension)

    @property
    def ord(self):
        return {"euclidean": 2, "sum": 1, "max": np.inf}[self.kind]

    def norm(self, x) -> float:
        x = as_point(x, self.dimension)
        return float(np.linalg.norm(x, self.ord))

    def dist(self, x, y) -> float:
        return self.norm(as_point(x, self.dimension) - as_point(y, self.dimension))

    def to_json(self):
        return {"norm": self.kind, "dim": self.dimension}


def as_point(x, dim: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float array, optionally checking its length."""
    p = np.asarray(x, dtype=float)
    if p.ndim == 0:
        p = p.reshape(1)
    if p.ndim != 1:
        raise InputError("a point must be a flat list of coordinates", shape=p.shape)
    if dim is not None and p.shape[0] != dim:
        raise InputError(f"dimension mismatch: expected {dim}, got {p.shape[0]}",
                         expected=dim, got=int(p.shape[0]))
    if not np.all(np.isfinite(p)):
        raise InputError("point has non-finite coordinates", point=p.tolist())
    return p


def norm(space: NormSpec, x) -> float:
    return space.norm(x)


class ConvexBody:
    """A nonempty compact convex subset of R^n.

    Subclasses implement membership, Euclidean projection, extreme points and
    an axis-aligned bounding box. Instances are treated as immutable.
    """

    shape = "abstract"
    dim: int

    def contains(self, x, tol: float = GEOMETRIC_TOL) -> bool:
        raise NotImplementedError

    def project(self, x) -> np.ndarray:
        raise NotImplementedError

    def extreme_points(self) -> list[np.ndarray]:
        raise NotImplementedError

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def interior_point(self) -> np.ndarray:
        lo, hi = self.bounding_box()
        return self.project((lo + hi) / 2)

    def diameter_bound(self, space: NormSpec) -> tuple[float, bool]:
        """Return ``(value, exact)``; inexact values are upper bounds."""
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Ball(ConvexBody):
    """Closed Euclidean ball."""

    center: np.ndarray
    radius: float
    shape = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not np.isfinite(self.radius) or self.radius < 0:
            raise InputError("ball radius must be a finite nonnegative number", radius=self.radius)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.shape[0]

    def contains(self, x, tol=GEOMETRIC_TOL):
        x = as_point(x, self.dim)
        return bool(np.linalg.norm(x - self.center) <= self.radius + tol)

    def project(self, x):
        x = as_point(x, self.dim)
        d = x - self.center
        n = np.linalg.norm(d)
        if n <= self.radius:
            return x
        return self.center + d * (self.radius / n)

    def extreme_points(self):
        pts = []
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = self.radius
            pts.append(self.center + e)
            pts.append(self.center - e)
        return pts

    def interior_point(self):
        return self.center.copy()

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def diameter_bound(self, space):
        # largest ||u|| over the Euclidean unit ball, per norm kind
        scale = {"euclidean": 1.0, "max": 1.0, "sum": np.sqrt(self.dim)}[space.kind]
        return 2 * self.radius * scale, True

    def to_json(self):
        return {"shape": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Box(ConvexBody):
    lo: np.ndarray
    hi: np.ndarray
    shape = "box"

    def __post_init__(self):
        lo, hi = as_point(self.lo), as_point(self.hi)
        if lo.shape != hi.shape:
            raise InputError("box corners have different dimensions")
        if np.any(lo > hi):
            raise InputError("box requires lo <= hi componentwise", lo=lo.tolist(), hi=hi.tolist())
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.shape[0]

    def contains(self, x, tol=GEOMETRIC_TOL):
        x = as_point(x, self.dim)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def project(self, x):
        return np.clip(as_point(x, self.dim), self.lo, self.hi)

    def extreme_points(self):
        pts, seen = [], set()
        for corner in itertools.product(*zip(self.lo, self.hi)):
            if corner not in seen:
                seen.add(corner)
                pts.append(np.array(corner, dtype=float))
            if len(pts) >= 4096:
                break
        return pts

    def interior_point(self):
        return (self.lo + self.hi) / 2

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def diameter_bound(self, space):
        return space.norm(self.hi - self.lo), True

    def to_json(self):
        return {"shape": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Polytope(ConvexBody):
    """Intersection of halfspaces ``normal . x <= offset``.

    Nonemptiness and boundedness are established at construction by linear
    programs along every coordinate direction; either failure is an
    :class:`InputError`.
    """

    normals: np.ndarray
    offsets: np.ndarray
    shape = "polytope"
    _lo: np.ndarray = field(init=False, repr=False)
    _hi: np.ndarray = field(init=False, repr=False)
    _inner: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.normals, dtype=float))
        b = np.asarray(self.offsets, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0] or A.shape[0] == 0:
            raise InputError("polytope needs one offset per halfspace normal")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise InputError("polytope data must be finite")
        if np.any(np.linalg.norm(A, axis=1) == 0):
            raise InputError("halfspace normal must be nonzero")
        object.__setattr__(self, "normals", A)
        object.__setattr__(self, "offsets", b)
        d = A.shape[1]
        lo, hi, optima = np.empty(d), np.empty(d), []
        for i in range(d):
            for sign in (1.0, -1.0):
                c = np.zeros(d)
                c[i] = sign
                res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * d, method="highs")
                if res.status == 2:
                    raise InputError("polytope is empty")
                if res.status == 3:
                    raise InputError("polytope is unbounded", direction=(-c).tolist())
                if res.status != 0:
                    raise InputError(f"polytope boundedness probe failed: {res.message}")
                optima.append(res.x)
                if sign > 0:
                    lo[i] = res.x[i]
                else:
                    hi[i] = res.x[i]
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)
        object.__setattr__(self, "_inner", np.mean(optima, axis=0))

    @property
    def dim(self):
        return self.normals.shape[1]

    def contains(self, x, tol=GEOMETRIC_TOL):
        x = as_point(x, self.dim)
        return bool(np.all(self.normals @ x <= self.offsets + tol))

    def project(self, x):
        x = as_point(x, self.dim)
        if np.all(self.normals @ x <= self.offsets + DYKSTRA_TOL):
            return x
        return dykstra_halfspaces(self.normals, self.offsets, x)

    def vertices(self) -> list[np.ndarray]:
        """Vertex enumeration by solving every d-subset of tight constraints."""
        A, b, d = self.normals, self.offsets, self.dim
        found = []
        for idx in itertools.combinations(range(len(b)), d):
            M = A[list(idx)]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            v = np.linalg.solve(M, b[list(idx)])
            if np.all(A @ v <= b + 1e-9) and not any(np.allclose(v, w, atol=1e-9) for w in found):
                found.append(v)
        return found

    def extreme_points(self):
        if self.dim <= 3 and len(self.offsets) <= 60:
            return self.vertices()
        lo, hi = self.bounding_box()
        return [self.project(c) for c in Box(lo, hi).extreme_points()[: 2 * self.dim]]

    def interior_point(self):
        return self._inner.copy()

    def bounding_box(self):
        return self._lo.copy(), self._hi.copy()

    def diameter_bound(self, space):
        if self.dim <= 3 and len(self.offsets) <= 60:
            return _max_pairwise(self.vertices(), space), True
        return space.norm(self._hi - self._lo), False

    def to_json(self):
        return {
            "shape": "polytope",
            "halfspaces": [{"normal": a.tolist(), "offset": float(c)}
                           for a, c in zip(self.normals, self.offsets)],
        }


@dataclass(frozen=True, eq=False)
class Hull(ConvexBody):
    """Convex hull of finitely many vertices."""

    vertices: np.ndarray
    shape = "hull"

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if V.shape[0] == 0 or V.size == 0:
            raise InputError("hull needs at least one vertex")
        if not np.all(np.isfinite(V)):
            raise InputError("hull vertices must be finite")
        object.__setattr__(self, "vertices", np.unique(V, axis=0))

    @property
    def dim(self):
        return self.vertices.shape[1]

    def contains(self, x, tol=GEOMETRIC_TOL):
        x = as_point(x, self.dim)
        return bool(np.linalg.norm(self.project(x) - x) <= tol)

    def project(self, x):
        x = as_point(x, self.dim)
        n = len(self.vertices)
        faces = sum(_ncr(n, k) for k in range(1, min(n, self.dim + 1) + 1))
        if self.dim <= 3 and faces <= FACE_ENUMERATION_LIMIT:
            return project_hull_faces(self.vertices, x)
        return project_hull_wolfe(self.vertices, x)[0]

    def extreme_points(self):
        return [v.copy() for v in self.vertices]

    def interior_point(self):
        return self.vertices.mean(axis=0)

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diameter_bound(self, space):
        return _max_pairwise(list(self.vertices), space), True

    def to_json(self):
        return {"shape": "hull", "vertices": self.vertices.tolist()}


def _ncr(n, k):
    from math import comb
    return comb(n, k)


def _max_pairwise(points, space: NormSpec) -> float:
    if len(points) < 2:
        return 0.0
    P = np.asarray(points)
    diffs = P[:, None, :] - P[None, :, :]
    return float(np.max(np.linalg.norm(diffs, ord=space.ord, axis=2)))


def dykstra_halfspaces(A, b, x, max_iter=DYKSTRA_MAX_ITER, tol=DYKSTRA_TOL):
    """Euclidean projection onto ``{y : A y <= b}`` by Dykstra's algorithm."""
    m = len(b)
    sq = np.einsum("ij,ij->i", A, A)
    y = x.copy()
    incr = np.zeros((m, x.shape[0]))
    for _ in range(max_iter):
        prev, prev_incr = y, incr.copy()
        for i in range(m):
            z = y + incr[i]
            viol = A[i] @ z - b[i]
            y = z - (viol / sq[i]) * A[i] if viol > 0 else z
            incr[i] = z - y
        # the iterate can sit still for a sweep while the corrections are still moving
        if (np.linalg.norm(y - prev) <= tol and np.linalg.norm(incr - prev_incr) <= tol
                and np.max(A @ y - b) <= tol):
            return y
    raise SolverError("Dykstra projection did not converge",
                      iterations=max_iter, point=x.tolist())


def project_hull_faces(V: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Exact projection onto conv(V) by enumerating simplices of <= d+1 vertices.

    The nearest point lies in the relative interior of some vertex simplex
    (Caratheodory), where it coincides with the affine-hull projection.
    """
    n, d = V.shape
    best, best_d = V[0], np.inf
    for k in range(1, min(n, d + 1) + 1):
        for idx in itertools.combinations(range(n), k):
            P = V[list(idx)]
            p0 = P[0]
            if k == 1:
                cand = p0
            else:
                D = (P[1:] - p0).T
                G = D.T @ D
                if np.linalg.matrix_rank(G, tol=1e-12 * max(1.0, np.trace(G))) < k - 1:
                    continue
                mu = np.linalg.solve(G, D.T @ (x - p0))
                if mu.min() < -1e-12 or mu.sum() > 1 + 1e-12:
                    continue
                cand = p0 + D @ mu
            dist = np.linalg.norm(cand - x)
            if dist < best_d:
                best, best_d = cand, dist
    return best.copy()


def project_hull_wolfe(V: np.ndarray, x: np.ndarray, gap_tol=WOLFE_GAP_TOL, max_iter=10_000):
    """Wolfe's minimum-norm-point method on ``conv(V) - x``.

    Returns ``(projection, gap)`` where ``gap`` is the Frank-Wolfe duality gap
    ``<p, p> - min_i <p, v_i - x>`` of the returned point.
    """
    P = V - x
    S = [int(np.argmin(np.einsum("ij,ij->i", P, P)))]
    lam = np.array([1.0])
    p = P[S[0]].copy()
    for _ in range(max_iter):
        j = int(np.argmin(P @ p))
        gap = float(p @ p - P[j] @ p)
        if gap <= gap_tol or j in S:
            return x + p, max(gap, 0.0)
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            Q = P[S]
            k = len(S)
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = Q @ Q.T
            K[:k, k] = 1.0
            K[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            alpha = np.linalg.lstsq(K, rhs, rcond=None)[0][:k]
            if np.all(alpha > 1e-14):
                lam = alpha
                break
            mask = alpha <= 1e-14
            theta = min(1.0, float(np.min(lam[mask] / (lam[mask] - alpha[mask]))))
            lam = theta * alpha + (1 - theta) * lam
            keep = lam > 1e-14
            S = [s for s, kp in zip(S, keep) if kp]
            lam = lam[keep]
            lam = lam / lam.sum()
        p = lam @ P[S]
    raise SolverError("Wolfe hull projection did not converge", point=x.tolist())


def project(body: ConvexBody, x, space: NormSpec | None = None) -> np.ndarray:
    """Euclidean nearest point of ``body`` to ``x``."""
    if space is not None and space.kind != "euclidean":
        raise ConfigurationError(
            f"metric projection is only defined for the Euclidean norm, not {space.kind!r}",
            norm=space.kind, shape=body.shape)
    return body.project(x)


def contains(body: ConvexBody, x, tol: float = GEOMETRIC_TOL) -> bool:
    return body.contains(x, tol)


def diameter(body: ConvexBody, space: NormSpec) -> float:
    return body.diameter_bound(space)[0]


def sample(body: ConvexBody, count: int, strategy: str = "extreme-first", seed: int = 0) -> list[np.ndarray]:
    """Deterministic probe points of ``body``.

    ``extreme-first`` lists corners/vertices (for a ball, ``center +- r e_i``),
    then the body's central point, then a scrambled Halton fill of the
    bounding box projected into the body. ``halton`` skips straight to the fill.
    """
    if count < 1:
        raise InputError("sample count must be >= 1", count=count)
    if strategy not in ("extreme-first", "halton"):
        raise InputError(f"unknown sampling strategy {strategy!r}")
    pts: list[np.ndarray] = []

    def push(p):
        if not any(np.array_equal(p, q) for q in pts):
            pts.append(np.asarray(p, dtype=float))

    if strategy == "extreme-first":
        for p in body.extreme_points():
            if len(pts) >= count:
                break
            push(p)
        if len(pts) < count:
            push(body.interior_point())
    if len(pts) < count:
        lo, hi = body.bounding_box()
        engine = qmc.Halton(d=body.dim, scramble=True, seed=seed)
        while len(pts) < count:
            need = count - len(pts)
            for u in engine.random(need):
                push(body.project(lo + u * (hi - lo)))
            if np.allclose(lo, hi):
                # degenerate body: nothing new can appear
                break
    return pts[:count]


def sample_pairs(body: ConvexBody, n_pairs: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """The first ``n_pairs`` index pairs ``i < j`` over ``sample`` points."""
    k = 2
    while k * (k - 1) // 2 < n_pairs:
        k += 1
    pts = sample(body, k, seed=seed)
    return [(pts[i], pts[j]) for i, j in itertools.combinations(range(len(pts)), 2)][:n_pairs]


def body_from_json(obj: dict) -> ConvexBody:
    if not isinstance(obj, dict) or "shape" not in obj:
        raise InputError("a body needs a 'shape' field", body=obj)
    shape = obj["shape"]
    try:
        if shape == "ball":
            return Ball(obj["center"], float(obj["radius"]))
        if shape == "box":
            return Box(obj["lo"], obj["hi"])
        if shape == "polytope":
            hs = obj["halfspaces"]
            normals, offsets = [], []
            for h in hs:
                if isinstance(h, dict):
                    normals.append(h["normal"])
                    offsets.append(h["offset"])
                else:
                    normals.append(h[0])
                    offsets.append(h[1])
            return Polytope(normals, offsets)
        if shape == "hull":
            return Hull(obj["vertices"])
    except KeyError as exc:
        raise InputError(f"body {shape!r} is missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed {shape!r} body: {exc}") from None
    raise InputError(f"unknown body shape {shape!r}")
