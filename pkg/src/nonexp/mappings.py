"""Composable self-maps of convex bodies and property certificates.

Maps are immutable expression trees. Certificates come in two grades:
``certified-analytic`` when a structural rule proves the property (operator
norm bounds, projections, closure under composition and averaging), and
``pass-sampled`` when only finitely many probe points were checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InputError
from .geometry import (
    GEOMETRIC_TOL,
    ConvexBody,
    NormSpec,
    as_point,
    body_from_json,
    sample,
    sample_pairs,
)

ANALYTIC = "certified-analytic"
SAMPLED = "pass-sampled"
FAIL = "FAIL"

MAX_WITNESSES = 1000
DEFAULT_A_GRID = (0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99)
POWER_ITER_TOL = 1e-10


class MapExpr:
    """Base class of the map algebra. Calling a map evaluates it."""

    kind = "abstract"
    dim: int | None = None

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x) -> np.ndarray:
        x = as_point(x, self.dim)
        return self._eval(x)

    def _eval(self, x):
        raise NotImplementedError

    def affine_form(self, dim: int):
        """``(A, b)`` with ``T x = A x + b`` everywhere, or None."""
        return None

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Identity(MapExpr):
    kind = "identity"

    def _eval(self, x):
        return x.copy()

    def affine_form(self, dim):
        return np.eye(dim), np.zeros(dim)

    def to_json(self):
        return {"map": "identity"}


@dataclass(frozen=True, eq=False)
class Affine(MapExpr):
    A: np.ndarray
    b: np.ndarray | None = None
    kind = "affine"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise InputError("affine self-maps need a square matrix", shape=A.shape)
        b = np.zeros(A.shape[0]) if self.b is None else as_point(self.b, A.shape[0])
        if not np.all(np.isfinite(A)):
            raise InputError("affine matrix must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.A.shape[0]

    def _eval(self, x):
        return self.A @ x + self.b

    def affine_form(self, dim):
        if dim != self.dim:
            raise InputError("dimension mismatch", expected=dim, got=self.dim)
        return self.A.copy(), self.b.copy()

    def to_json(self):
        return {"map": "affine", "A": self.A.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True, eq=False)
class ProjectOnto(MapExpr):
    """Euclidean metric projection onto a convex body."""

    body: ConvexBody
    kind = "project"

    @property
    def dim(self):
        return self.body.dim

    def _eval(self, x):
        return self.body.project(x)

    def to_json(self):
        return {"map": "project", "onto": self.body.to_json()}


@dataclass(frozen=True, eq=False)
class Rotation(MapExpr):
    """Rotation by ``angle`` in the coordinate plane ``(i, j)``, about ``center``."""

    plane: tuple[int, int]
    angle: float
    center: np.ndarray | None = None
    kind = "rotation"

    def __post_init__(self):
        i, j = (int(k) for k in self.plane)
        if not 0 <= i < j:
            raise InputError("rotation plane needs indices 0 <= i < j", plane=list(self.plane))
        object.__setattr__(self, "plane", (i, j))
        object.__setattr__(self, "angle", float(self.angle))
        if self.center is not None:
            object.__setattr__(self, "center", as_point(self.center))

    @property
    def dim(self):
        return None if self.center is None else self.center.shape[0]

    def matrix(self, dim):
        i, j = self.plane
        if j >= dim:
            raise InputError(f"rotation plane {self.plane} does not fit dimension {dim}")
        R = np.eye(dim)
        c, s = math.cos(self.angle), math.sin(self.angle)
        R[i, i], R[i, j], R[j, i], R[j, j] = c, -s, s, c
        return R

    def _eval(self, x):
        R = self.matrix(x.shape[0])
        if self.center is None:
            return R @ x
        return self.center + R @ (x - self.center)

    def affine_form(self, dim):
        R = self.matrix(dim)
        if self.center is None:
            return R, np.zeros(dim)
        return R, self.center - R @ self.center

    def quarter_turns(self):
        k = self.angle / (math.pi / 2)
        return abs(k - round(k)) < 1e-12

    def to_json(self):
        out = {"map": "rotation", "plane": list(self.plane), "angle": self.angle}
        if self.center is not None:
            out["center"] = self.center.tolist()
        return out


@dataclass(frozen=True, eq=False)
class Constant(MapExpr):
    point: np.ndarray
    kind = "constant"

    def __post_init__(self):
        object.__setattr__(self, "point", as_point(self.point))

    @property
    def dim(self):
        return self.point.shape[0]

    def _eval(self, x):
        return self.point.copy()

    def affine_form(self, dim):
        return np.zeros((dim, dim)), self.point.copy()

    def to_json(self):
        return {"map": "constant", "point": self.point.tolist()}


@dataclass(frozen=True, eq=False)
class Compose(MapExpr):
    """``maps[0] o maps[1] o ... o maps[-1]``: the last map is applied first."""

    maps: tuple
    kind = "compose"

    def __post_init__(self):
        if len(self.maps) == 0:
            raise InputError("compose needs at least one map")
        object.__setattr__(self, "maps", tuple(self.maps))

    def _eval(self, x):
        for m in reversed(self.maps):
            x = m.evaluate(x)
        return x

    def affine_form(self, dim):
        A, b = np.eye(dim), np.zeros(dim)
        for m in reversed(self.maps):
            f = m.affine_form(dim)
            if f is None:
                return None
            A, b = f[0] @ A, f[0] @ b + f[1]
        return A, b

    def to_json(self):
        return {"map": "compose", "of": [m.to_json() for m in self.maps]}


@dataclass(frozen=True, eq=False)
class ConvexCombo(MapExpr):
    weights: tuple
    maps: tuple
    kind = "convex"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.maps) or len(w) == 0:
            raise InputError("convex combination needs one weight per map")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise InputError("convex weights must be nonnegative and sum to 1", weights=w.tolist())
        object.__setattr__(self, "weights", tuple(float(v) for v in w))
        object.__setattr__(self, "maps", tuple(self.maps))

    def _eval(self, x):
        return sum(w * m.evaluate(x) for w, m in zip(self.weights, self.maps))

    def affine_form(self, dim):
        A, b = np.zeros((dim, dim)), np.zeros(dim)
        for w, m in zip(self.weights, self.maps):
            f = m.affine_form(dim)
            if f is None:
                return None
            A, b = A + w * f[0], b + w * f[1]
        return A, b

    def to_json(self):
        return {"map": "convex", "weights": list(self.weights), "of": [m.to_json() for m in self.maps]}


def evaluate(map: MapExpr, x) -> np.ndarray:
    return map.evaluate(x)


def map_from_json(obj, named: dict | None = None) -> MapExpr:
    """Decode a map. Strings and ``{"map": "ref", "name": ...}`` look up ``named``."""
    named = named or {}
    if isinstance(obj, str):
        obj = {"map": "ref", "name": obj}
    if not isinstance(obj, dict) or "map" not in obj:
        raise InputError("a map needs a 'map' field", value=obj)
    kind = obj["map"]
    try:
        if kind == "ref":
            if obj["name"] not in named:
                raise InputError(f"unknown map name {obj['name']!r}")
            return named[obj["name"]]
        if kind == "identity":
            return Identity()
        if kind == "affine":
            return Affine(obj["A"], obj.get("b"))
        if kind in ("project", "projectOnto"):
            return ProjectOnto(body_from_json(obj.get("onto", obj.get("body"))))
        if kind == "rotation":
            return Rotation(tuple(obj.get("plane", (0, 1))), float(obj["angle"]), obj.get("center"))
        if kind == "constant":
            return Constant(obj["point"])
        if kind == "compose":
            return Compose(tuple(map_from_json(m, named) for m in obj["of"]))
        if kind in ("convex", "convexCombo"):
            return ConvexCombo(tuple(obj["weights"]), tuple(map_from_json(m, named) for m in obj["of"]))
    except KeyError as exc:
        raise InputError(f"map {kind!r} is missing field {exc}") from None
    raise InputError(f"unknown map kind {kind!r}")


# -- certificates -----------------------------------------------------------

@dataclass
class PropertyCertificate:
    property: str
    verdict: str
    witnesses: list = field(default_factory=list)
    sample_count: int = 0
    tolerance: float = GEOMETRIC_TOL
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict != FAIL

    def to_json(self):
        return {
            "property": self.property,
            "verdict": self.verdict,
            "witnesses": self.witnesses,
            "sampleCount": self.sample_count,
            "tolerance": self.tolerance,
            "details": self.details,
        }


def _verdict(witnesses, analytic=False):
    if witnesses:
        return FAIL
    return ANALYTIC if analytic else SAMPLED


class _Witnesses(list):
    """List that stops growing at MAX_WITNESSES but keeps counting."""

    total = 0

    def add(self, item):
        self.total += 1
        if len(self) < MAX_WITNESSES:
            self.append(item)


def spectral_norm(A: np.ndarray, tol: float = POWER_ITER_TOL, max_iter: int = 100_000) -> float:
    """Largest singular value by power iteration on ``A^T A``."""
    M = A.T @ A
    v = np.random.default_rng(0).normal(size=A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    return math.sqrt(max(lam, 0.0))


def operator_norm(A: np.ndarray, space: NormSpec) -> float:
    if space.kind == "euclidean":
        return spectral_norm(A)
    if space.kind == "sum":
        return float(np.max(np.abs(A).sum(axis=0)))
    return float(np.max(np.abs(A).sum(axis=1)))


def analytic_nonexpansive(m: MapExpr, space: NormSpec) -> str | None:
    """Name of the structural rule proving ``m`` nonexpansive, or None."""
    if isinstance(m, (Identity, Constant)):
        return m.kind
    if isinstance(m, ProjectOnto):
        return "euclidean projection" if space.kind == "euclidean" else None
    if isinstance(m, Rotation):
        if space.kind == "euclidean":
            return "rotation"
        if m.quarter_turns():
            return "signed coordinate permutation"
        return _affine_rule(m.matrix(space.dimension), space)
    if isinstance(m, Affine):
        return _affine_rule(m.A, space)
    if isinstance(m, (Compose, ConvexCombo)):
        rules = [analytic_nonexpansive(c, space) for c in m.maps]
        if all(rules):
            return f"{m.kind} of certified maps"
        return None
    return None


def _affine_rule(A, space):
    op = operator_norm(A, space)
    if op <= 1 + POWER_ITER_TOL:
        return f"operator norm {op:.12g} <= 1"
    return None


def certify_self_map(m: MapExpr, body: ConvexBody, sample_count: int = 64,
                     tol: float = GEOMETRIC_TOL, seed: int = 0) -> PropertyCertificate:
    wit = _Witnesses()
    pts = sample(body, sample_count, seed=seed)
    for x in pts:
        y = m(x)
        if not body.contains(y, tol):
            wit.add({"x": x.tolist(), "image": y.tolist()})
    return PropertyCertificate("selfMap", _verdict(wit), list(wit), len(pts), tol,
                               {"violations": wit.total})


def certify_nonexpansive(m: MapExpr, body: ConvexBody, space: NormSpec, sample_count: int = 500,
                         tol: float = GEOMETRIC_TOL, seed: int = 0,
                         check_self_map: bool = True) -> PropertyCertificate:
    """Certify ``||Tx - Ty|| <= ||x - y||`` on ``body``.

    ``sample_count`` is the number of probe pairs used when no structural rule
    applies. Self-map failures are reported as witnesses with ``kind: selfMap``.
    """
    wit = _Witnesses()
    details = {}
    if check_self_map:
        sm = certify_self_map(m, body, max(16, int(math.isqrt(2 * sample_count)) + 2), tol, seed)
        for w in sm.witnesses:
            wit.add({"kind": "selfMap", **w})
    rule = analytic_nonexpansive(m, space)
    if rule is not None and not wit:
        details["rule"] = rule
        return PropertyCertificate("nonexpansive", ANALYTIC, [], 0, tol, details)
    pairs = sample_pairs(body, sample_count, seed)
    worst = -np.inf
    for x, y in pairs:
        lhs = space.norm(m(x) - m(y))
        rhs = space.norm(x - y)
        worst = max(worst, lhs - rhs)
        if lhs > rhs + tol:
            wit.add({"kind": "pair", "x": x.tolist(), "y": y.tolist(), "imageDistance": lhs, "distance": rhs})
    details.update(violations=wit.total, maxExcess=float(worst))
    return PropertyCertificate("nonexpansive", _verdict(wit), list(wit), len(pairs), tol, details)


def firm_gap(x, y, tx, ty, a):
    """``||a(x-y) + (1-a)(Tx-Ty)|| - ||Tx-Ty||`` (Euclidean); negative means violated."""
    d, e = x - y, tx - ty
    return float(np.linalg.norm(a * d + (1 - a) * e) - np.linalg.norm(e))


def certify_firmly_nonexpansive(m: MapExpr, body: ConvexBody, sample_count: int = 500,
                                a_grid=DEFAULT_A_GRID, tol: float = GEOMETRIC_TOL,
                                seed: int = 0) -> PropertyCertificate:
    """Check ``||Tx-Ty|| <= ||a(x-y) + (1-a)(Tx-Ty)||`` on sampled pairs and an a-grid.

    For maps with an affine form the worst ``a`` in (0, 1) is also located by a
    bounded scalar minimization per pair.
    """
    wit = _Witnesses()
    pairs = sample_pairs(body, sample_count, seed)
    affine = m.affine_form(body.dim) is not None
    worst = np.inf
    for x, y in pairs:
        tx, ty = m(x), m(y)
        grid = list(a_grid)
        if affine:
            res = minimize_scalar(lambda a: firm_gap(x, y, tx, ty, a), bounds=(0.0, 1.0),
                                  method="bounded", options={"xatol": 1e-9})
            if 0 < res.x < 1:
                grid.append(float(res.x))
        for a in grid:
            g = firm_gap(x, y, tx, ty, a)
            worst = min(worst, g)
            if g < -tol:
                wit.add({"x": x.tolist(), "y": y.tolist(), "a": a, "gap": g})
    details = {"aGrid": list(a_grid), "violations": wit.total, "minGap": float(worst),
               "affineLineSearch": affine}
    return PropertyCertificate("firmlyNonexpansive", _verdict(wit), list(wit), len(pairs), tol, details)


def certify_commuting(maps, body: ConvexBody, sample_count: int = 64, tol: float = GEOMETRIC_TOL,
                      seed: int = 0, space: NormSpec | None = None) -> PropertyCertificate:
    space = space or NormSpec("euclidean", body.dim)
    wit = _Witnesses()
    pts = sample(body, sample_count, seed=seed)
    worst = 0.0
    for i in range(len(maps)):
        for j in range(i + 1, len(maps)):
            for x in pts:
                gap = space.norm(maps[i](maps[j](x)) - maps[j](maps[i](x)))
                worst = max(worst, gap)
                if gap > tol:
                    wit.add({"i": i, "j": j, "x": x.tolist(), "gap": gap})
    return PropertyCertificate("commuting", _verdict(wit), list(wit), len(pts), tol,
                               {"violations": wit.total, "maxGap": worst})


def certify_preserves_set(m: MapExpr, points, tol: float = GEOMETRIC_TOL) -> PropertyCertificate:
    """Check ``T(A) = A`` for a finite set ``A`` up to ``tol`` (Euclidean matching)."""
    A = np.atleast_2d(np.asarray(points, dtype=float))
    images = np.array([m(a) for a in A])
    D = np.linalg.norm(images[:, None, :] - A[None, :, :], axis=2)
    wit = []
    for k in np.flatnonzero(D.min(axis=1) > tol):
        wit.append({"kind": "imageOutsideSet", "point": A[k].tolist(), "image": images[k].tolist()})
    for k in np.flatnonzero(D.min(axis=0) > tol):
        wit.append({"kind": "notHit", "point": A[k].tolist()})
    return PropertyCertificate("preservesSet", _verdict(wit), wit, len(A), tol)
