"""Tchebyshev radii and centers of finite sets, and invariance of the center set.

If a nonexpansive ``T`` maps a bounded set ``A`` onto itself and ``A`` lies
in the ball ``B(c, r)``, then ``A = T A`` lies in ``B(Tc, r)``; so ``T`` maps
the center set into itself. :func:`invariance_check` verifies this for a
concrete ``T`` and ``A``, and :func:`fixed_point_in_center` locates a common
fixed point of a commuting family inside the center set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigurationError, FalsificationError, HypothesisError, InputError
from .geometry import GEOMETRIC_TOL, Box, NormSpec
from .mappings import (
    FAIL,
    SAMPLED,
    PropertyCertificate,
    certify_commuting,
    certify_nonexpansive,
    certify_preserves_set,
)

WELZL_SEED = 12345
TIE_TOL = 1e-12


@dataclass
class CenterResult:
    radius: float
    center: np.ndarray
    norm: str
    enclosure: float
    tolerance: float
    exact: bool = True
    center_box: tuple | None = None
    optimality_gap: float | None = None
    details: dict = field(default_factory=dict)

    @property
    def encloses(self) -> bool:
        return self.enclosure <= self.radius + self.tolerance

    def to_json(self):
        out = {
            "radius": self.radius,
            "center": self.center.tolist(),
            "norm": self.norm,
            "certificate": {"maxDistance": self.enclosure, "tolerance": self.tolerance,
                            "pass": self.encloses},
            "exact": self.exact,
            "optimalityGap": self.optimality_gap,
        }
        if self.center_box is not None:
            out["centerBox"] = {"lo": self.center_box[0].tolist(), "hi": self.center_box[1].tolist()}
        out.update(self.details)
        return out


def _points(A) -> np.ndarray:
    P = np.asarray(A, dtype=float)
    if P.ndim == 1:
        P = P.reshape(-1, 1) if P.size else P.reshape(0, 1)
    if P.shape[0] == 0:
        raise InputError("center of an empty set is undefined")
    if not np.all(np.isfinite(P)):
        raise InputError("points must be finite")
    return P


def _circumball(R):
    p0 = R[0]
    if len(R) == 1:
        return p0.copy(), 0.0
    D = np.asarray(R[1:]) - p0
    G = D @ D.T
    lam = np.linalg.lstsq(G, 0.5 * np.diag(G), rcond=None)[0]
    c = p0 + lam @ D
    return c, float(max(np.sum((np.asarray(R) - c) ** 2, axis=1)))


def _outside(p, c, r2):
    return float(np.sum((p - c) ** 2)) > r2 + TIE_TOL * max(1.0, r2)


def _welzl(P, R, d):
    """Smallest ball containing ``P`` with every point of ``R`` on its boundary."""
    if len(R) == d + 1:
        return _circumball(R)
    if R:
        c, r2 = _circumball(R)
        start = 0
    else:
        c, r2 = P[0].copy(), 0.0
        start = 1
    for i in range(start, len(P)):
        if _outside(P[i], c, r2):
            c, r2 = _welzl(P[:i], R + [P[i]], d)
    return c, r2


def minimum_enclosing_ball(A, seed: int = WELZL_SEED):
    """Smallest Euclidean ball containing ``A`` (Welzl's move-to-front recursion)."""
    P = np.unique(_points(A), axis=0)
    P = P[np.random.default_rng(seed).permutation(len(P))]
    c, r2 = _welzl(P, [], P.shape[1])
    return c, float(np.sqrt(max(np.max(np.sum((P - c) ** 2, axis=1)), 0.0)))


def _sum_norm_center(P):
    n, d = P.shape
    # variables: c (d), t (1), u (n*d)
    nv = d + 1 + n * d
    cost = np.zeros(nv)
    cost[d] = 1.0
    rows, rhs = [], []
    for k in range(n):
        for i in range(d):
            u = d + 1 + k * d + i
            r = np.zeros(nv); r[i] = 1.0; r[u] = -1.0
            rows.append(r); rhs.append(P[k, i])
            r = np.zeros(nv); r[i] = -1.0; r[u] = -1.0
            rows.append(r); rhs.append(-P[k, i])
        r = np.zeros(nv); r[d] = -1.0; r[d + 1 + k * d: d + 1 + (k + 1) * d] = 1.0
        rows.append(r); rhs.append(0.0)
    A_ub, b_ub = np.array(rows), np.array(rhs)
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * nv, method="highs")
    if res.status != 0:
        raise ConfigurationError(f"sum-norm center LP failed: {res.message}")
    dual = float(b_ub @ res.ineqlin.marginals)
    return res.x[:d], float(res.fun), abs(float(res.fun) - dual)


def chebyshev_center(A, space: NormSpec | None = None, tol: float = GEOMETRIC_TOL) -> CenterResult:
    """Tchebyshev radius and a center of the finite set ``A``.

    Euclidean: exact minimum enclosing ball, the unique center. Max norm: the
    center set is the box reported in ``center_box``; its midpoint is returned.
    Sum norm: a linear program; the primal-dual gap is reported.
    """
    P = _points(A)
    d = P.shape[1]
    space = space or NormSpec("euclidean", d)
    if space.dimension != d:
        raise InputError("points do not match the space dimension", expected=space.dimension, got=d)
    box = None
    gap = None
    exact = True
    if space.kind == "euclidean":
        c, r = minimum_enclosing_ball(P)
    elif space.kind == "max":
        lo, hi = P.min(axis=0), P.max(axis=0)
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        r = float(half.max())
        c = mid
        slack = r - half
        box = (mid - slack, mid + slack)
    else:
        c, r, gap = _sum_norm_center(P)
        exact = False
    enclosure = max(space.norm(c - a) for a in P)
    return CenterResult(float(r), c, space.kind, float(enclosure), tol, exact, box, gap)


def grid_center_oracle(A, space: NormSpec | None = None, step: float = 1e-3):
    """Brute-force minimax over a grid covering the bounding box of ``A`` (2-D or 1-D).

    Returns ``(grid_center, grid_radius)``; ``grid_radius`` is an upper bound
    on the true radius within ``step * sqrt(d) / 2`` of it (Euclidean).
    """
    P = _points(A)
    d = P.shape[1]
    if d > 2:
        raise InputError("grid oracle is limited to dimension <= 2")
    space = space or NormSpec("euclidean", d)
    lo, hi = P.min(axis=0), P.max(axis=0)
    axes = [lo[i] + step * np.arange(int(np.floor((hi[i] - lo[i]) / step)) + 2) for i in range(d)]
    if d == 1:
        axes.append(np.zeros(1))
        P = np.c_[P, np.zeros(len(P))]
    # the grid is a product, so each point's distance field is a separable outer combination
    worst = np.zeros((len(axes[0]), len(axes[1])))
    for p in P:
        u, v = np.abs(axes[0] - p[0]), np.abs(axes[1] - p[1])
        if space.kind == "max":
            field = np.maximum.outer(u, v)
        elif space.kind == "sum":
            field = np.add.outer(u, v)
        else:
            field = np.add.outer(u * u, v * v)
        np.maximum(worst, field, out=worst)
    i, j = np.unravel_index(int(np.argmin(worst)), worst.shape)
    r = float(worst[i, j])
    if space.kind == "euclidean":
        r = float(np.sqrt(r))
    return np.array([axes[0][i], axes[1][j]][:d]), r


def _sample_body(P) -> Box:
    lo, hi = P.min(axis=0), P.max(axis=0)
    pad = np.maximum((hi - lo) * 0.25, 0.5)
    return Box(lo - pad, hi + pad)


def invariance_check(T, A, space: NormSpec | None = None, tol: float = GEOMETRIC_TOL,
                     check: bool = True) -> PropertyCertificate:
    """Certify ``T c`` is again a Tchebyshev center of ``A`` when ``T A = A``."""
    P = _points(A)
    space = space or NormSpec("euclidean", P.shape[1])
    pres = certify_preserves_set(T, P, tol)
    hyps = [pres.to_json()]
    if not pres.passed:
        raise HypothesisError("hypothesis certificate FAIL: preservesSet", certificate=pres.to_json())
    if check:
        ne = certify_nonexpansive(T, _sample_body(P), space, check_self_map=False)
        hyps.append(ne.to_json())
        if not ne.passed:
            raise HypothesisError("hypothesis certificate FAIL: nonexpansive", certificate=ne.to_json())
    res = chebyshev_center(P, space, tol)
    Tc = T(res.center)
    far = max(space.norm(Tc - a) for a in P)
    ok = far <= res.radius + tol
    wit = [] if ok else [{"center": res.center.tolist(), "image": Tc.tolist(),
                          "maxDistance": far, "radius": res.radius}]
    return PropertyCertificate("centerInvariance", SAMPLED if ok else FAIL, wit, len(P), tol,
                               {"center": res.center.tolist(), "imageOfCenter": Tc.tolist(),
                                "radius": res.radius, "maxDistanceFromImage": far,
                                "hypotheses": hyps})


def fixed_point_in_center(family, A, space: NormSpec | None = None, tol: float = GEOMETRIC_TOL,
                          check: bool = True):
    """A common fixed point of ``family`` lying in the center set of ``A``.

    Returns ``(point, certificate)``. In the Euclidean norm the center set is
    the single MEB center; in the max norm it is a box and a retraction onto
    the common fixed points is built inside that box.
    """
    from .retraction import build_retraction

    P = _points(A)
    space = space or NormSpec("euclidean", P.shape[1])
    family = list(family)
    hyps = []
    if check:
        body = _sample_body(P)
        for i, T in enumerate(family):
            for cert in (certify_nonexpansive(T, body, space, check_self_map=False),
                         certify_preserves_set(T, P, tol)):
                cert.details["member"] = i
                hyps.append(cert.to_json())
                if not cert.passed:
                    raise HypothesisError(f"hypothesis certificate FAIL: {cert.property} (member {i})",
                                          certificate=cert.to_json())
        if len(family) > 1:
            cert = certify_commuting(family, body, tol=tol, space=space)
            hyps.append(cert.to_json())
            if not cert.passed:
                raise HypothesisError("hypothesis certificate FAIL: commuting", certificate=cert.to_json())
    res = chebyshev_center(P, space, tol)
    details = {"center": res.to_json(), "hypotheses": hyps}
    if space.kind == "euclidean":
        point = res.center
        bound = tol
    elif space.kind == "max":
        lo, hi = res.center_box
        box = Box(lo, hi)
        R = build_retraction(family, box, space, check=check)
        point = R(res.center)
        bound = max(R.range_bound(), tol)
        details["retraction"] = R.to_json()
    else:
        raise ConfigurationError("fixed_point_in_center supports the euclidean and max norms")
    residuals = [space.norm(T(point) - point) for T in family]
    far = max(space.norm(point - a) for a in P)
    details.update(point=point.tolist(), residuals=residuals, maxDistance=far, bound=bound)
    failed = [i for i, r in enumerate(residuals) if r > bound]
    if far > res.radius + bound:
        failed.append("center")
    if failed and check:
        raise FalsificationError("certified family has no common fixed point at the center",
                                 points=P.tolist(), family=[T.to_json() for T in family
                                                            if hasattr(T, "to_json")],
                                 failed=failed, **{k: v for k, v in details.items() if k != "hypotheses"})
    wit = [{"member": i, "residual": residuals[i]} for i in failed if isinstance(i, int)]
    if "center" in failed:
        wit.append({"reason": "point outside the center set", "maxDistance": far})
    cert = PropertyCertificate("fixedPointInCenter", FAIL if failed else SAMPLED, wit, len(P), bound, details)
    return point, cert
