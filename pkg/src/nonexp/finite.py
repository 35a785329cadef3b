"""Exact checks on finite metric spaces with families of self-maps.

Maps are index arrays: ``T[i]`` is the image of point ``i``. Composition
``T o S`` is ``T[S]``. On a finite space every topological hypothesis
(compactness, continuity, closedness) holds automatically, so the structural
statements about commuting families can be enumerated exhaustively:

* the eventual core, ``C_{k+1} = intersection of T(C_k)``, on which every
  member of a commuting family is a surjection;
* the gamma set, the points where all elements of the generated semigroup
  commute, which is invariant and contains every common fixed point;
* nonexpansive surjections of a finite metric space are isometries.

A run in which these conclusions fail although their hypotheses hold raises
:class:`FalsificationError`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import FalsificationError, InputError, ResourceError
from .mappings import ANALYTIC, FAIL, PropertyCertificate, map_from_json

FLOAT_TOL = 1e-12


@dataclass(eq=False)
class FiniteSystem:
    distance: np.ndarray
    maps: dict
    embedding: np.ndarray | None = None
    extensions: dict | None = None
    tolerance: float = field(init=False)

    def __post_init__(self):
        D = np.asarray(self.distance, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1] or D.shape[0] == 0:
            raise InputError("distance must be a nonempty square matrix")
        if not np.all(np.isfinite(D)):
            raise InputError("distances must be finite")
        if np.all(D == np.round(D)) and np.max(np.abs(D)) < 2 ** 53:
            D = D.astype(np.int64)
            self.tolerance = 0
        else:
            self.tolerance = FLOAT_TOL
        tol = self.tolerance
        if np.any(np.diag(D) != 0) or np.any(D < 0):
            raise InputError("distance needs a zero diagonal and nonnegative entries")
        if np.any(np.abs(D - D.T) > tol):
            raise InputError("distance matrix is not symmetric")
        off = ~np.eye(len(D), dtype=bool)
        if np.any(D[off] <= 0):
            raise InputError("distinct points must have positive distance")
        # d(i,k) <= d(i,j) + d(j,k) for all triples
        if np.any(D[:, None, :] > D[:, :, None] + D[None, :, :] + tol):
            i, j, k = np.argwhere(D[:, None, :] > D[:, :, None] + D[None, :, :] + tol)[0]
            raise InputError("triangle inequality fails", triple=[int(i), int(j), int(k)])
        self.distance = D
        n = len(D)
        clean = {}
        for name, arr in dict(self.maps).items():
            a = np.asarray(arr)
            if a.shape != (n,) or not np.issubdtype(a.dtype, np.integer) or a.min() < 0 or a.max() >= n:
                raise InputError(f"map {name!r} must be an index array of length {n} with entries in 0..{n - 1}")
            clean[name] = a.astype(np.int64)
        self.maps = clean
        if self.embedding is not None:
            E = np.atleast_2d(np.asarray(self.embedding, dtype=float))
            if E.shape[0] != n:
                raise InputError("embedding needs one point per element")
            self.embedding = E

    @property
    def size(self) -> int:
        return len(self.distance)

    def select(self, names=None) -> dict:
        if names is None:
            return dict(self.maps)
        missing = [n for n in names if n not in self.maps]
        if missing:
            raise InputError(f"unknown map names {missing}")
        return {n: self.maps[n] for n in names}

    @classmethod
    def from_json(cls, obj: dict) -> "FiniteSystem":
        if not isinstance(obj, dict) or "distance" not in obj or "maps" not in obj:
            raise InputError("finite system needs 'distance' and 'maps'")
        ext = None
        if obj.get("extensions"):
            ext = {k: map_from_json(v) for k, v in obj["extensions"].items()}
        return cls(obj["distance"], obj["maps"], obj.get("embedding"), ext)

    def to_json(self):
        out = {"distance": self.distance.tolist(), "maps": {k: v.tolist() for k, v in self.maps.items()}}
        if self.embedding is not None:
            out["embedding"] = self.embedding.tolist()
        return out


def _bundle(system, **extra):
    return {"system": system.to_json(), **extra}


def commutes_everywhere(maps) -> bool:
    arrs = list(maps.values()) if isinstance(maps, dict) else list(maps)
    return all(np.array_equal(a[b], b[a]) for i, a in enumerate(arrs) for b in arrs[i + 1:])


@dataclass
class CoreResult:
    indices: list
    commuting: bool
    iterations: int
    surjective: dict

    @property
    def hypothesis_met(self) -> bool:
        return self.commuting

    def to_json(self):
        return {"core": self.indices, "commuting": self.commuting,
                "hypothesis": "met" if self.commuting else "hypothesis unmet",
                "iterations": self.iterations, "surjective": self.surjective}


def eventual_core(system: FiniteSystem, names=None, start=None) -> CoreResult:
    """Iterate ``C -> intersection of T(C)`` from ``start`` (default: every point) to its limit."""
    maps = system.select(names)
    commuting = commutes_everywhere(maps)
    C = set(range(system.size)) if start is None else set(int(i) for i in start)
    steps = 0
    while True:
        nxt = set(C)
        for T in maps.values():
            nxt &= set(T[sorted(C)].tolist())
        steps += 1
        if nxt == C:
            break
        C = nxt
    core = sorted(C)
    surj = {name: set(T[core].tolist()) == C for name, T in maps.items()}
    if commuting and (not core or not all(surj.values())):
        raise FalsificationError("commuting family without a surjective core",
                                 **_bundle(system, names=list(maps), core=core, surjective=surj))
    return CoreResult(core, commuting, steps, surj)


@dataclass
class SemigroupClosure:
    elements: list
    words: list
    size_bound_hit: bool = False

    def as_array(self) -> np.ndarray:
        return np.array(self.elements, dtype=np.int64)

    def to_json(self):
        return {"size": len(self.elements), "words": ["".join(f"[{w}]" for w in word) for word in self.words],
                "sizeBoundHit": self.size_bound_hit}


def semigroup_closure(system: FiniteSystem, names=None, max_elements: int = 10 ** 6,
                      adjoin_identity: bool = False) -> SemigroupClosure:
    """Breadth-first closure of the generators under composition.

    Words list generator names left to right, the rightmost applied first.
    """
    gens = system.select(names)
    elements, words, index = [], [], {}
    queue = deque()

    def push(arr, word):
        key = tuple(arr.tolist())
        if key in index:
            return
        if len(elements) >= max_elements:
            raise ResourceError(f"semigroup closure exceeds {max_elements} elements",
                                max_elements=max_elements)
        index[key] = len(elements)
        elements.append(key)
        words.append(word)
        queue.append(arr)

    if adjoin_identity:
        push(np.arange(system.size), ())
    for name, g in gens.items():
        push(g, (name,))
    while queue:
        e = queue.popleft()
        w = words[index[tuple(e.tolist())]]
        for name, g in gens.items():
            push(g[e], (name,) + w)
    return SemigroupClosure(elements, words)


def gamma_set(system: FiniteSystem, names=None, closure: SemigroupClosure | None = None) -> list:
    """Points ``x`` with ``U(V(x)) = V(U(x))`` for all ``U, V`` in the generated semigroup."""
    closure = closure or semigroup_closure(system, names)
    E = closure.as_array()
    out = []
    for x in range(system.size):
        vals = E[:, x]
        UV = E[:, vals]  # UV[u, v] = U(V(x))
        if np.array_equal(UV, UV.T):
            out.append(x)
    return out


def common_fixed_points(system: FiniteSystem, names=None) -> list:
    maps = system.select(names)
    return [x for x in range(system.size) if all(T[x] == x for T in maps.values())]


def gamma_properties_check(system: FiniteSystem, names=None, gamma=None) -> PropertyCertificate:
    """Exact check: ``T(gamma) <= gamma`` for every generator and ``Fix <= gamma``."""
    maps = system.select(names)
    G = set(gamma_set(system, names) if gamma is None else gamma)
    fix = common_fixed_points(system, names)
    wit = []
    for name, T in maps.items():
        out = sorted(int(T[x]) for x in G if int(T[x]) not in G)
        if out:
            wit.append({"claim": "invariance", "map": name, "escapes": out})
    missing = [x for x in fix if x not in G]
    if missing:
        wit.append({"claim": "fixInGamma", "points": missing})
    if wit:
        raise FalsificationError("gamma-set properties violated",
                                 **_bundle(system, names=list(maps), gamma=sorted(G), witnesses=wit))
    return PropertyCertificate("gammaProperties", ANALYTIC, [], system.size, 0,
                               {"gamma": sorted(G), "fix": fix,
                                "claims": {"invariance": True, "fixInGamma": True,
                                           "closed": "trivial: finite spaces are discrete"},
                                "somewhereCommuting": bool(G)})


def isometry_check(system: FiniteSystem, T, subset=None, name: str = "T") -> PropertyCertificate:
    """Nonexpansive + surjective on ``subset`` must imply distance preserving."""
    if isinstance(T, str):
        name, T = T, system.select([T])[T]
    T = np.asarray(T)
    S = sorted(range(system.size) if subset is None else set(int(i) for i in subset))
    Sset = set(S)
    if not set(T[S].tolist()) <= Sset:
        raise InputError(f"map {name!r} does not map the subset into itself")
    D, tol = system.distance, system.tolerance
    idx = np.array(S, dtype=np.int64)
    before = D[np.ix_(idx, idx)]
    after = D[np.ix_(T[idx], T[idx])]
    nonexp = bool(np.all(after <= before + tol))
    surj = set(T[S].tolist()) == Sset
    iso = bool(np.all(np.abs(after - before) <= tol))
    details = {"map": name, "subset": S, "nonexpansive": nonexp, "surjective": surj,
               "isometry": iso, "claimTriggered": nonexp and surj, "tolerance": tol}
    if nonexp and surj and not iso:
        raise FalsificationError("nonexpansive surjection is not an isometry",
                                 **_bundle(system, **details))
    wit = []
    if not iso:
        i, j = np.argwhere(np.abs(after - before) > tol)[0]
        wit.append({"x": S[i], "y": S[j], "distance": before[i, j].item(), "imageDistance": after[i, j].item(),
                    "reason": "not nonexpansive" if not nonexp else "not surjective"})
    return PropertyCertificate("isometry", FAIL if wit else ANALYTIC, wit, len(S), tol, details)


def finite_pipeline(system: FiniteSystem, names=None) -> dict:
    """Gamma set, then the core inside it, then isometry and center checks on the core."""
    from .geometry import NormSpec
    from .tchebyshev import chebyshev_center, fixed_point_in_center

    maps = system.select(names)
    report = {"maps": list(maps)}
    closure = semigroup_closure(system, names)
    report["closure"] = closure.to_json()
    gamma = gamma_set(system, names, closure)
    report["gamma"] = gamma
    if not gamma:
        report["status"] = "not somewhere commuting"
        return report
    report["gammaProperties"] = gamma_properties_check(system, names, gamma).to_json()
    core = eventual_core(system, names, start=gamma)
    report["core"] = core.to_json()
    isos = {n: isometry_check(system, T, core.indices, n) for n, T in maps.items()}
    report["isometries"] = {n: c.to_json() for n, c in isos.items()}
    idx = np.array(core.indices)
    restricted = {n: T[idx] for n, T in maps.items()}
    report["groupOnCore"] = {
        "bijective": all(len(set(v.tolist())) == len(idx) for v in restricted.values()),
        "commuting": all(np.array_equal(maps[a][maps[b][idx]], maps[b][maps[a][idx]])
                         for a in maps for b in maps),
    }
    passed = all(c.passed for c in isos.values())
    if system.embedding is not None:
        A = system.embedding[idx]
        space = NormSpec("euclidean", A.shape[1])
        if system.extensions:
            ext = [system.extensions[n] for n in maps if n in system.extensions]
            point, cert = fixed_point_in_center(ext, A, space)
            report["fixedPoint"] = {"point": point.tolist(), "certificate": cert.to_json()}
            passed = passed and cert.passed
        else:
            report["center"] = chebyshev_center(A, space).to_json()
    report["status"] = "ok" if passed else "FAIL"
    return report
