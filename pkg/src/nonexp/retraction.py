"""Nonexpansive retractions onto common fixed-point sets of commuting families.

``build_retraction`` runs the stage-by-stage induction: ``R_0`` is the
identity and ``R_{k+1} x = F_{s*} x`` for the anchored resolvent of
``T_{k+1} o R_k``. The limit over ``s`` is replaced by detecting when ``F_s``
stops moving on a probe set under doubling of ``s``; a run that never
stabilizes is an error, not an answer.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from .contraction import loglog_slope, resolvent, resolvent_solve
from .errors import HypothesisError, InputError, StabilizationError
from .geometry import GEOMETRIC_TOL, ConvexBody, NormSpec, as_point, diameter, sample
from .mappings import (
    FAIL,
    SAMPLED,
    MapExpr,
    PropertyCertificate,
    certify_commuting,
    certify_nonexpansive,
    firm_gap,
    DEFAULT_A_GRID,
)

DEFAULT_BUILD_SCHEDULE = tuple(2 ** k for k in range(1, 41))
DEFAULT_STABILIZATION_TOL = 1e-8
DEFAULT_PROBES = 32
DEFAULT_MAX_ITER = 200_000
QUANTUM = 1e-12
MAX_GRID_POINTS = 10 ** 7


class ComposedMap:
    """``T o R`` for a map and an evaluable retraction, keeping affine forms."""

    def __init__(self, T, R):
        self.T, self.R = T, R

    def __call__(self, x):
        return self.T(self.R(x))

    def affine_form(self, dim):
        fT = getattr(self.T, "affine_form", lambda d: None)(dim)
        fR = getattr(self.R, "affine_form", lambda d: None)(dim)
        if fT is None or fR is None:
            return None
        return fT[0] @ fR[0], fT[0] @ fR[1] + fT[1]


class RetractionModel:
    """A lazily evaluated retraction of ``body``.

    ``kind`` is ``identity`` (stage 0), ``resolvent-limit`` (one induction
    stage, evaluated as ``F_{s*}`` of ``T o previous``) or ``finder`` (an
    explicit affine retraction supplied by a retraction finder).
    Evaluations are memoized on inputs quantized to 1e-12; the cache is
    guarded by a lock so concurrent callers see a consistent map.
    """

    def __init__(self, body: ConvexBody, space: NormSpec, *, kind="identity", stage=0,
                 family=(), T=None, previous=None, s_star=None, stabilization=None,
                 stabilization_tol=None, affine=None, max_iter=DEFAULT_MAX_ITER):
        self.body, self.space = body, space
        self.kind, self.stage = kind, stage
        self.family = tuple(family)
        self.T, self.previous = T, previous
        self.s_star = s_star
        self.stabilization = stabilization or []
        self.stabilization_tol = stabilization_tol
        self.max_iter = max_iter
        self.hypotheses: list[PropertyCertificate] = []
        self.stage_certificates: list[PropertyCertificate] = []
        self._affine = affine
        self._cache: dict = {}
        self._lock = threading.Lock()
        if kind == "resolvent-limit" and affine is None:
            f = ComposedMap(T, previous).affine_form(body.dim)
            if f is not None:
                q = 1 - 1 / s_star
                K = np.linalg.inv(np.eye(body.dim) - q * f[0])
                self._affine = (K / s_star, q * K @ f[1])

    @property
    def accuracy(self) -> float:
        """Solver tolerance used per evaluation (0 for closed forms)."""
        if self.kind != "resolvent-limit" or self._affine is not None:
            return 0.0
        return self.stabilization_tol / (4 * self.s_star)

    def affine_form(self, dim):
        if self.kind == "identity":
            return np.eye(dim), np.zeros(dim)
        if self._affine is None:
            return None
        return self._affine[0].copy(), self._affine[1].copy()

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x) -> np.ndarray:
        x = as_point(x, self.body.dim)
        if not self.body.contains(x):
            raise InputError("retraction evaluated outside its body", x=x.tolist())
        if self.kind == "identity":
            return x.copy()
        if self._affine is not None:
            return self._affine[0] @ x + self._affine[1]
        key = tuple(np.round(x / QUANTUM).astype(np.int64))
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit.copy()
        y = resolvent(self.T, self.previous, self.s_star, x, tol=self.accuracy, max_iter=self.max_iter)
        with self._lock:
            self._cache.setdefault(key, y)
        return y.copy()

    def chain(self) -> list["RetractionModel"]:
        out, r = [], self
        while r is not None:
            out.append(r)
            r = r.previous
        return out[::-1]

    def range_bound(self, solver_tol: float | None = None) -> float:
        """``diam(C) * sum_k 1/s*_k`` plus twice the solver tolerances."""
        diam = diameter(self.body, self.space)
        total = 0.0
        for r in self.chain():
            if r.kind == "resolvent-limit":
                total += diam / r.s_star + 2 * (r.accuracy if solver_tol is None else solver_tol)
        return total

    def to_json(self):
        return {
            "stage": self.stage,
            "kind": self.kind,
            "stages": [
                {"stage": r.stage, "kind": r.kind, "sStar": r.s_star,
                 "closedForm": r._affine is not None, "stabilization": r.stabilization}
                for r in self.chain() if r.kind != "identity"
            ],
            "hypotheses": [c.to_json() for c in self.hypotheses],
            "stageCertificates": [c.to_json() for c in self.stage_certificates],
        }


def identity_retraction(body: ConvexBody, space: NormSpec) -> RetractionModel:
    return RetractionModel(body, space)


def check_hypotheses(family, body, space, sample_count=200, tol=GEOMETRIC_TOL, seed=0):
    """Nonexpansive self-map certificates per member plus one commuting certificate.

    Raises :class:`HypothesisError` naming the first FAIL.
    """
    certs = []
    for i, T in enumerate(family):
        c = certify_nonexpansive(T, body, space, sample_count, tol, seed)
        c.details["member"] = i
        certs.append(c)
        if not c.passed:
            raise HypothesisError(f"hypothesis certificate FAIL: nonexpansive (member {i})",
                                  certificate=c.to_json())
    if len(family) > 1:
        c = certify_commuting(list(family), body, 64, tol, seed, space)
        certs.append(c)
        if not c.passed:
            raise HypothesisError("hypothesis certificate FAIL: commuting", certificate=c.to_json())
    return certs


def _build_stage(T, previous: RetractionModel, body, space, s_schedule, stabilization_tol,
                 probes, max_iter, family=()):
    trace = []
    values: dict = {}

    def F(s):
        if s not in values:
            tol = stabilization_tol / (4 * s)
            values[s] = [resolvent_solve(T, previous, s, p, tol=tol, max_iter=max_iter).fixed_point
                         for p in probes]
        return values[s]

    for s in s_schedule:
        delta = max(space.norm(a - b) for a, b in zip(F(2 * s), F(s)))
        trace.append({"stage": previous.stage + 1, "s": s, "maxProbeDelta": delta})
        if delta <= stabilization_tol:
            return RetractionModel(body, space, kind="resolvent-limit", stage=previous.stage + 1,
                                   family=family, T=T, previous=previous, s_star=s,
                                   stabilization=trace, stabilization_tol=stabilization_tol,
                                   max_iter=max_iter)
        values.pop(s / 2, None)
    raise StabilizationError(
        f"stage {previous.stage + 1}: F_s did not stabilize on the probe set",
        stage=previous.stage + 1, trace=trace)


def build_retraction(family, body: ConvexBody, space: NormSpec | None = None,
                     s_schedule=DEFAULT_BUILD_SCHEDULE,
                     stabilization_tol: float = DEFAULT_STABILIZATION_TOL,
                     probe_count: int = DEFAULT_PROBES, check: bool = True, seed: int = 0,
                     max_iter: int = DEFAULT_MAX_ITER) -> RetractionModel:
    """Nonexpansive retraction of ``body`` onto the common fixed points of ``family``.

    ``family`` must be pairwise commuting nonexpansive self-maps; with
    ``check`` the hypotheses are certified first and a FAIL raises
    :class:`HypothesisError`.
    """
    space = space or NormSpec("euclidean", body.dim)
    family = tuple(family)
    certs = check_hypotheses(family, body, space, seed=seed) if check else []
    probes = sample(body, probe_count, seed=seed)
    R = identity_retraction(body, space)
    for k, T in enumerate(family):
        R = _build_stage(T, R, body, space, s_schedule, stabilization_tol, probes, max_iter,
                         family=family[: k + 1])
    R.hypotheses = certs
    return R


def stabilization_rows(R: RetractionModel):
    yield ("stage", "s", "max_probe_delta")
    for r in R.chain():
        for row in r.stabilization:
            yield (row["stage"], row["s"], row["maxProbeDelta"])


@dataclass
class RetractionCertificate:
    range_residuals: list
    idempotence_residual: float
    nonexpansive_excess: float
    firmness: PropertyCertificate | None
    stabilization: list
    tolerance: float
    nonexpansive_tol: float
    passes: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.passes.values())

    def to_json(self):
        return {
            "rangeInFix": self.range_residuals,
            "idempotenceResidual": self.idempotence_residual,
            "nonexpansiveness": self.nonexpansive_excess,
            "firmness": None if self.firmness is None else self.firmness.to_json(),
            "stabilization": self.stabilization,
            "tolerance": self.tolerance,
            "nonexpansiveTolerance": self.nonexpansive_tol,
            "pass": self.passes,
            "witnesses": self.witnesses,
        }


def certify_retraction(R, family, body: ConvexBody, space: NormSpec | None = None,
                       sample_count: int = 64, tol: float | None = None,
                       check_firm: bool = False, nonexpansive_tol: float = 1e-7,
                       seed: int = 0) -> RetractionCertificate:
    """Measure range-in-Fix, idempotence, nonexpansiveness and (optionally) firmness.

    ``tol`` defaults to the model's propagated range bound.
    """
    space = space or NormSpec("euclidean", body.dim)
    if tol is None:
        tol = R.range_bound() if isinstance(R, RetractionModel) else GEOMETRIC_TOL
    pts = sample(body, sample_count, seed=seed)
    images = [R(x) for x in pts]
    witnesses = {}
    range_res = []
    for i, T in enumerate(family):
        res = [space.norm(T(y) - y) for y in images]
        k = int(np.argmax(res))
        range_res.append(res[k])
        if res[k] > tol:
            witnesses.setdefault("rangeInFix", []).append({"member": i, "x": pts[k].tolist(), "residual": res[k]})
    idem = [space.norm(R(y) - y) for y in images]
    idem_max = max(idem)
    excess = -np.inf
    worst_pair = None
    for i, j in itertools.combinations(range(len(pts)), 2):
        e = space.norm(images[i] - images[j]) - space.norm(pts[i] - pts[j])
        if e > excess:
            excess, worst_pair = e, (i, j)
    firm = None
    if check_firm and space.kind == "euclidean":
        wit = []
        for i, j in itertools.combinations(range(len(pts)), 2):
            for a in DEFAULT_A_GRID:
                g = firm_gap(pts[i], pts[j], images[i], images[j], a)
                if g < -nonexpansive_tol:
                    wit.append({"x": pts[i].tolist(), "y": pts[j].tolist(), "a": a, "gap": g})
        firm = PropertyCertificate("firmlyNonexpansive", FAIL if wit else SAMPLED, wit[:1000],
                                   len(pts) * (len(pts) - 1) // 2, nonexpansive_tol,
                                   {"aGrid": list(DEFAULT_A_GRID)})
    passes = {
        "rangeInFix": all(r <= tol for r in range_res),
        "idempotence": idem_max <= tol,
        "nonexpansive": excess <= nonexpansive_tol,
    }
    if excess > nonexpansive_tol:
        i, j = worst_pair
        witnesses["nonexpansive"] = [{"x": pts[i].tolist(), "y": pts[j].tolist(), "excess": excess}]
    if firm is not None:
        passes["firmlyNonexpansive"] = firm.passed
    stab = []
    if isinstance(R, RetractionModel):
        stab = [{"stage": r.stage, "sStar": r.s_star,
                 "finalDelta": r.stabilization[-1]["maxProbeDelta"] if r.stabilization else 0.0}
                for r in R.chain() if r.kind == "resolvent-limit"]
    return RetractionCertificate(range_res, idem_max, float(excess), firm, stab, tol,
                                 nonexpansive_tol, passes, witnesses)


def probe_grid(body: ConvexBody, resolution: float) -> list[np.ndarray]:
    if body.dim > 3:
        raise InputError("grid probes are limited to dimension <= 3", dim=body.dim)
    if resolution <= 0:
        raise InputError("grid resolution must be positive")
    lo, hi = body.bounding_box()
    counts = np.floor((hi - lo) / resolution + 1e-9).astype(int) + 1
    if int(np.prod(counts.astype(float))) > MAX_GRID_POINTS:
        raise InputError("probe grid too large", points=int(np.prod(counts.astype(float))))
    axes = [np.round(lo[i] + resolution * np.arange(counts[i]), 12) for i in range(body.dim)]
    pts = []
    for c in itertools.product(*axes):
        p = np.array(c) + 0.0
        if body.contains(p):
            pts.append(p)
    return pts


def fix_set_probe(family, body: ConvexBody, resolution: float, tol: float | None = None,
                  space: NormSpec | None = None) -> list[np.ndarray]:
    """Grid points of ``body`` moved by at most ``tol`` (default resolution/2) by every member."""
    space = space or NormSpec("euclidean", body.dim)
    tol = resolution / 2 if tol is None else tol
    return [p for p in probe_grid(body, resolution)
            if all(space.norm(T(p) - p) <= tol for T in family)]


def commute_retract_check(T, S_family, R, body: ConvexBody, resolution: float = 0.05,
                          tol: float = GEOMETRIC_TOL, space: NormSpec | None = None,
                          points=None) -> PropertyCertificate:
    """Compare ``Fix(T o R)`` with ``Fix T  &  Fix S`` on a probe grid."""
    space = space or NormSpec("euclidean", body.dim)
    pts = probe_grid(body, resolution) if points is None else [as_point(p) for p in points]
    fix_tr, fix_both, wit = [], [], []
    for p in pts:
        in_tr = space.norm(T(R(p)) - p) <= tol
        in_both = space.norm(T(p) - p) <= tol and all(space.norm(S(p) - p) <= tol for S in S_family)
        if in_tr:
            fix_tr.append(p.tolist())
        if in_both:
            fix_both.append(p.tolist())
        if in_tr != in_both:
            wit.append({"x": p.tolist(), "inFixTR": in_tr, "inFixTandFixS": in_both})
    return PropertyCertificate("fixTR=fixT&fixS", FAIL if wit else SAMPLED, wit[:1000], len(pts), tol,
                               {"fixTR": fix_tr[:1000], "fixTandFixS": fix_both[:1000],
                                "resolution": resolution})


def apfs_transfer_check(T, S_family, R, body: ConvexBody, x, s_schedule,
                        tol: float = 1e-6, space: NormSpec | None = None,
                        solver_tol: float = 1e-13) -> PropertyCertificate:
    """Along ``x_n = F_{s_n} x`` for ``T o R``, residuals of every S, of R and of T must vanish.

    "Vanish" means: the last residual is at most ``tol`` and the smallest
    constant ``c`` with ``residual_n <= c / s_n`` for all n is at most
    ``3 diam(C)``.
    """
    space = space or NormSpec("euclidean", body.dim)
    x = as_point(x, body.dim)
    diam = diameter(body, space)
    seqs = {f"S{i}": [] for i in range(len(S_family))}
    seqs["R"], seqs["T"] = [], []
    for s in s_schedule:
        xn = resolvent(T, R, s, x, body, solver_tol)
        for i, S in enumerate(S_family):
            seqs[f"S{i}"].append(space.norm(S(xn) - xn))
        seqs["R"].append(space.norm(R(xn) - xn))
        seqs["T"].append(space.norm(T(xn) - xn))
    wit, summary = [], {}
    for name, vals in seqs.items():
        c = max(v * s for v, s in zip(vals, s_schedule))
        summary[name] = {"residuals": vals, "dominatingConstant": c,
                         "slope": loglog_slope(s_schedule, vals)}
        if c > 3 * diam:
            wit.append({"sequence": name, "reason": "not dominated by 3 diam / s", "constant": c})
        if vals[-1] > tol:
            wit.append({"sequence": name, "reason": "final residual above tol", "final": vals[-1]})
    return PropertyCertificate("apfsTransfer", FAIL if wit else SAMPLED, wit, len(s_schedule), tol,
                               {"sValues": list(s_schedule), "diameter": diam, "sequences": summary,
                                "dominationRule": "c <= 3 diam"})


# -- composition strategy with a single-map retraction finder --------------

def resolvent_limit_finder(body: ConvexBody, space: NormSpec | None = None,
                           s_schedule=DEFAULT_BUILD_SCHEDULE,
                           stabilization_tol: float = DEFAULT_STABILIZATION_TOL,
                           probe_count: int = DEFAULT_PROBES, seed: int = 0,
                           max_iter: int = DEFAULT_MAX_ITER):
    """Finder that retracts onto ``Fix G`` through the stabilized resolvent limit of ``G``."""
    space = space or NormSpec("euclidean", body.dim)
    probes = sample(body, probe_count, seed=seed)

    def finder(G):
        return _build_stage(G, identity_retraction(body, space), body, space, s_schedule,
                            stabilization_tol, probes, max_iter)
    return finder


def affine_fix_projection_finder(body: ConvexBody, space: NormSpec | None = None, tol: float = 1e-10):
    """Finder returning the orthogonal projection onto ``Fix G`` for affine ``G``.

    ``Fix G`` is the solution set of ``(A - I) x = -b``; the projection onto an
    affine subspace is a nonexpansive retraction in the Euclidean norm.
    """
    space = space or NormSpec("euclidean", body.dim)

    def finder(G):
        f = getattr(G, "affine_form", lambda d: None)(body.dim)
        if f is None:
            raise InputError("affine finder needs a map with an affine form")
        B = f[0] - np.eye(body.dim)
        Bp = np.linalg.pinv(B, rcond=1e-12)
        x0 = -Bp @ f[1]
        if np.linalg.norm(B @ x0 + f[1]) > tol:
            raise InputError("affine map has no fixed point")
        M = np.eye(body.dim) - Bp @ B
        return RetractionModel(body, space, kind="finder", affine=(M, x0 - M @ x0))
    return finder


def bruck_compose(family, finder, body: ConvexBody, space: NormSpec | None = None,
                  tol: float = 1e-7, resolution: float = 0.1, check: bool = True,
                  seed: int = 0) -> RetractionModel:
    """Literal composition induction: ``R_1 = finder(T_1)``, ``R_{k+1} = finder(T_{k+1} o R_k)``.

    After each step ``Fix(T_{k+1} o R_k) = Fix T_{k+1} & Fix{T_1..T_k}`` is
    checked on probe points (grid for dimension <= 3, samples otherwise).
    """
    space = space or NormSpec("euclidean", body.dim)
    family = tuple(family)
    if not family:
        return identity_retraction(body, space)
    certs = check_hypotheses(family, body, space, seed=seed) if check else []
    stage_certs = []
    try:
        R = finder(family[0])
    except Exception as exc:
        raise StabilizationError(f"finder failed at stage 1: {exc}", stage=1) from exc
    R.stage, R.family = 1, family[:1]
    pts = probe_grid(body, resolution) if body.dim <= 3 else sample(body, 64, seed=seed)
    for k in range(1, len(family)):
        T = family[k]
        cert = commute_retract_check(T, family[:k], R, body, tol=tol, space=space, points=pts)
        cert.details["stage"] = k + 1
        stage_certs.append(cert)
        if not cert.passed:
            raise HypothesisError(f"stage {k + 1}: Fix(T R) differs from Fix T & Fix S",
                                  certificate=cert.to_json())
        try:
            nxt = finder(ComposedMap(T, R))
        except Exception as exc:
            raise StabilizationError(f"finder failed at stage {k + 1}: {exc}", stage=k + 1) from exc
        nxt.stage, nxt.family = k + 1, family[: k + 1]
        R = nxt
    R.hypotheses = certs
    R.stage_certificates = stage_certs
    return R
