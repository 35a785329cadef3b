"""Banach fixed-point iteration and the anchored resolvent ``F_s``.

For a map ``G = T o R`` and an anchor ``x`` the averaged map

    T_{x,s} z = x / s + (1 - 1/s) G z

is a contraction with factor ``q = 1 - 1/s`` whenever ``G`` is nonexpansive.
Its unique fixed point is ``F_s x``. Because ``F_s x - G F_s x`` equals
``(x - G F_s x) / s``, the residual of ``F_s x`` under ``G`` is at most
``diam(C) / s``; :func:`apfs_certify` measures exactly that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, SolverError
from .geometry import GEOMETRIC_TOL, ConvexBody, NormSpec, as_point, diameter, sample_pairs
from .mappings import FAIL, SAMPLED, PropertyCertificate

DEFAULT_S_SCHEDULE = tuple(2 ** k for k in range(1, 13))
RATIO_SLACK = 1e-6
RATIO_STRIKES = 3
EPS = np.finfo(float).eps


@dataclass
class ContractionSolveReport:
    fixed_point: np.ndarray
    iterations: int
    q: float
    a_priori_bound: float
    a_posteriori_residual: float
    tolerance: float
    effective_tolerance: float
    precision_limited: bool = False
    method: str = "banach"
    differences: list = field(default_factory=list)

    def to_json(self):
        return {
            "fixedPoint": self.fixed_point.tolist(),
            "iterations": self.iterations,
            "contractionFactor": self.q,
            "aPrioriBound": self.a_priori_bound,
            "aPosterioriResidual": self.a_posteriori_residual,
            "tolerance": self.tolerance,
            "effectiveTolerance": self.effective_tolerance,
            "precisionLimited": self.precision_limited,
            "method": self.method,
        }


def _euclid(v):
    return float(np.linalg.norm(v))


def default_max_iter(q: float, tol: float, scale: float) -> int:
    """A-priori iteration count for reaching ``tol``, plus 50 steps of slack."""
    if q == 0 or scale <= 0 or tol * (1 - q) >= scale:
        return 51
    return int(math.ceil(math.log(tol * (1 - q) / scale) / math.log(q))) + 50


def banach_solve(fn, x0, q: float, tol: float = 1e-9, max_iter: int | None = None,
                 diam: float | None = None, norm=None, ratio_probe: bool = True,
                 guard_floor: float = 0.0) -> ContractionSolveReport:
    """Iterate ``x_{k+1} = fn(x_k)`` for a map with contraction factor ``q``.

    Stops once ``||x_{k+1} - x_k|| <= tol (1 - q) / q``, which bounds the
    distance to the true fixed point by ``tol``. That threshold is floored at a
    few ulps of the iterate; when the floor is what stopped the run,
    ``precision_limited`` is set.

    The caller's ``q`` is checked twice: ``ratio_probe`` compares ``fn`` at
    ``x0`` and at small coordinate perturbations of it before iterating, and
    during iteration three consecutive difference ratios above ``q + 1e-6``
    abort the run. Either failure raises :class:`InputError`.
    """
    norm = norm or _euclid
    if not (0 <= q < 1):
        raise InputError(f"contraction factor must lie in [0, 1), got {q}", q=q)
    if tol <= 0:
        raise InputError("tolerance must be positive", tol=tol)
    x = as_point(x0)
    fx = as_point(fn(x))
    if ratio_probe:
        h = 1e-3 * max(1.0, norm(x))
        for i in range(x.shape[0]):
            e = np.zeros_like(x)
            e[i] = h
            ratio = norm(as_point(fn(x + e)) - fx) / h
            if ratio > q + RATIO_SLACK:
                raise InputError(
                    f"map is not a q-contraction: probe ratio {ratio:.6g} exceeds q = {q:.6g}",
                    ratio=ratio, q=q, direction=i)
    first = norm(fx - x)
    if max_iter is None:
        max_iter = default_max_iter(q, tol, diam if diam is not None else first)
    threshold = math.inf if q == 0 else tol * (1 - q) / q
    diffs = [first]
    strikes = 0
    prev, cur = x, fx
    k = 1
    while True:
        d = diffs[-1]
        floor = 4 * EPS * max(norm(prev), norm(cur), 1e-300)
        if d <= max(threshold, floor):
            break
        if k >= max_iter:
            raise SolverError(f"no convergence within {max_iter} iterations", iterations=k,
                              q=q, lastDifferences=diffs[-5:])
        nxt = as_point(fn(cur))
        d_new = norm(nxt - cur)
        # a few ulps of absolute slack so rounding noise on tiny differences is not a strike
        noise = 16 * EPS * max(norm(cur), norm(nxt))
        if d > max(floor, guard_floor) and d_new > (q + RATIO_SLACK) * d + guard_floor + noise:
            strikes += 1
            if strikes >= RATIO_STRIKES:
                raise InputError(
                    "contraction ratio test failed: successive differences do not decay by q",
                    q=q, lastDifferences=diffs[-5:] + [d_new])
        else:
            strikes = 0
        diffs.append(d_new)
        prev, cur = cur, nxt
        k += 1
    residual = norm(as_point(fn(cur)) - cur)
    a_priori = (q ** k) / (1 - q) * first if q > 0 else 0.0
    return ContractionSolveReport(
        fixed_point=cur, iterations=k, q=q, a_priori_bound=a_priori,
        a_posteriori_residual=residual, tolerance=tol,
        effective_tolerance=max(tol, floor * q / (1 - q) if q > 0 else tol),
        precision_limited=diffs[-1] > threshold, differences=diffs,
    )


def _affine(obj, dim):
    f = getattr(obj, "affine_form", None)
    return f(dim) if f is not None else None


def resolvent_solve(T, R, s, x, body: ConvexBody | None = None, tol: float = 1e-12,
                    max_iter: int | None = None, norm=None) -> ContractionSolveReport:
    """Compute ``F_s x``, the fixed point of ``z -> x/s + (1 - 1/s) T(R(z))``.

    The iteration starts at the anchor ``x``. When both ``T`` and ``R`` have an
    affine form the fixed point is obtained by one linear solve instead.
    ``R`` may be None for the identity.
    """
    if s < 1:
        raise InputError("s must be >= 1", s=s)
    x = as_point(x)
    if body is not None and not body.contains(x):
        raise InputError("anchor point lies outside the body", x=x.tolist())
    s = float(s)
    q = 1.0 - 1.0 / s
    dim = x.shape[0]
    fT = _affine(T, dim)
    fR = (np.eye(dim), np.zeros(dim)) if R is None else _affine(R, dim)
    if fT is not None and fR is not None:
        A = fT[0] @ fR[0]
        c = fT[0] @ fR[1] + fT[1]
        z = np.linalg.solve(np.eye(dim) - q * A, x / s + q * c)
        residual = _norm_or(norm)(x / s + q * (A @ z + c) - z)
        return ContractionSolveReport(z, 0, q, 0.0, residual, tol, tol, method="affine-solve")
    if R is None:
        G = T
        floor = 0.0
    else:
        def G(z):
            return T(R(z))
        floor = getattr(R, "accuracy", 0.0)
    return banach_solve(lambda z: x / s + q * G(z), x, q, tol=tol, max_iter=max_iter,
                        norm=norm, ratio_probe=False, guard_floor=floor)


def _norm_or(norm):
    return norm or _euclid


def resolvent(T, R, s, x, body: ConvexBody | None = None, tol: float = 1e-12,
              max_iter: int | None = None) -> np.ndarray:
    return resolvent_solve(T, R, s, x, body, tol, max_iter).fixed_point


def resolvent_nonexpansive_check(T, R, s, body: ConvexBody, space: NormSpec | None = None,
                                 sample_count: int = 200, tol: float = GEOMETRIC_TOL,
                                 solver_tol: float = 1e-12, seed: int = 0) -> PropertyCertificate:
    """Sampled check that ``F_s`` is nonexpansive."""
    space = space or NormSpec("euclidean", body.dim)
    cache = {}

    def F(p):
        key = p.tobytes()
        if key not in cache:
            cache[key] = resolvent(T, R, s, p, body, solver_tol)
        return cache[key]

    wit = []
    pairs = sample_pairs(body, sample_count, seed)
    worst = -np.inf
    for x, y in pairs:
        lhs, rhs = space.norm(F(x) - F(y)), space.norm(x - y)
        worst = max(worst, lhs - rhs)
        if lhs > rhs + tol:
            wit.append({"x": x.tolist(), "y": y.tolist(), "imageDistance": lhs, "distance": rhs})
    return PropertyCertificate("nonexpansive", FAIL if wit else SAMPLED, wit, len(pairs), tol,
                               {"map": f"F_s, s={s:g}", "maxExcess": float(worst)})


@dataclass
class ApfsCertificate:
    s_values: list
    residuals: list
    bounds: list
    identity_gaps: list
    diameter: float
    tolerance: float
    slope: float | None
    passed: bool
    failures: list = field(default_factory=list)

    def to_json(self):
        return {
            "sValues": self.s_values,
            "residuals": self.residuals,
            "bounds": self.bounds,
            "identityGaps": self.identity_gaps,
            "diameter": self.diameter,
            "tolerance": self.tolerance,
            "logLogSlope": self.slope,
            "pass": self.passed,
            "failures": self.failures,
        }

    def csv_rows(self):
        yield ("s", "residual", "bound")
        for s, r, b in zip(self.s_values, self.residuals, self.bounds):
            yield (s, r, b)


def loglog_slope(s_values, values) -> float | None:
    pts = [(math.log(s), math.log(v)) for s, v in zip(s_values, values) if v > 0]
    if len(pts) < 2:
        return None
    a = np.array(pts)
    return float(np.polyfit(a[:, 0], a[:, 1], 1)[0])


def apfs_certify(T, R, x, body: ConvexBody, space: NormSpec | None = None,
                 s_schedule=DEFAULT_S_SCHEDULE, tol: float = GEOMETRIC_TOL) -> ApfsCertificate:
    """Measure ``||T R F_s x - F_s x||`` against ``diam(C)/s`` over a schedule.

    Also checks the identity ``residual = ||T R F_s x - x|| / s`` within ``tol``.
    """
    space = space or NormSpec("euclidean", body.dim)
    s_schedule = list(s_schedule)
    if any(b <= a for a, b in zip(s_schedule, s_schedule[1:])):
        raise InputError("s schedule must be increasing", schedule=s_schedule)
    x = as_point(x, body.dim)
    diam = diameter(body, space)
    res, bounds, gaps, failures = [], [], [], []
    for s in s_schedule:
        F = resolvent(T, R, s, x, body, tol=min(1e-12, tol / 100))
        TRF = T(F if R is None else R(F))
        r = space.norm(TRF - F)
        gap = abs(r - space.norm(TRF - x) / s)
        res.append(r)
        bounds.append(diam / s)
        gaps.append(gap)
        if r > diam / s + tol:
            failures.append({"s": s, "reason": "residual exceeds diam/s", "residual": r})
        if gap > tol:
            failures.append({"s": s, "reason": "averaging identity violated", "gap": gap})
    return ApfsCertificate(s_schedule, res, bounds, gaps, diam, tol, loglog_slope(s_schedule, res),
                           not failures, failures)
