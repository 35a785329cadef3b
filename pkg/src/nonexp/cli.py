"""Scenario-driven command line interface.

One scenario file describes one task. The report is JSON on stdout (or
``--out``); traces go to CSV. Exit codes: 0 all certificates pass, 1 a FAIL
or falsification, 2 bad input, configuration or unmet hypothesis, 3 solver
or stabilization failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .contraction import DEFAULT_S_SCHEDULE, apfs_certify, resolvent_solve
from .errors import ConfigurationError, FalsificationError, InputError, NonexpError, SolverError
from .finite import (
    FiniteSystem,
    eventual_core,
    finite_pipeline,
    gamma_properties_check,
    gamma_set,
    isometry_check,
    semigroup_closure,
)
from .geometry import GEOMETRIC_TOL, NormSpec, body_from_json, diameter, as_point
from .mappings import (
    certify_commuting,
    certify_firmly_nonexpansive,
    certify_nonexpansive,
    map_from_json,
)
from .report import dumps, write_csv
from .retraction import (
    DEFAULT_BUILD_SCHEDULE,
    DEFAULT_PROBES,
    DEFAULT_STABILIZATION_TOL,
    apfs_transfer_check,
    build_retraction,
    certify_retraction,
    probe_grid,
    stabilization_rows,
)
from .tchebyshev import chebyshev_center, fixed_point_in_center, invariance_check

log = logging.getLogger("nonexp")

SCHEMA = 1
TASKS = ("certify", "retract", "resolvent", "apfs", "center", "finite", "pipeline")
DEFAULT_TOLERANCES = {
    "certificate": GEOMETRIC_TOL,
    "commuting": GEOMETRIC_TOL,
    "stabilization": DEFAULT_STABILIZATION_TOL,
    "solver": 1e-12,
    "nonexpansive": 1e-7,
    "range": None,
    "transfer": 1e-6,
}

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, FalsificationError):
        return EXIT_FAIL
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    return EXIT_INPUT


# -- scenario ---------------------------------------------------------------

def _schedule(obj, default):
    if obj is None:
        return list(default)
    if isinstance(obj, dict):
        base = obj.get("base", 2)
        return [base ** k for k in range(int(obj["from"]), int(obj["to"]) + 1)]
    if isinstance(obj, list) and obj:
        return [float(s) for s in obj]
    raise InputError("schedule must be a list or {base, from, to}")


@dataclass
class Scenario:
    task: str
    space: NormSpec | None = None
    body: object = None
    maps: dict = field(default_factory=dict)
    family: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    name: str = ""
    x: np.ndarray | None = None
    s: float | None = None
    schedule: object = None
    points: np.ndarray | None = None
    system: FiniteSystem | None = None
    options: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def member(self, name):
        if name not in self.maps:
            raise InputError(f"unknown map name {name!r}")
        return self.maps[name]

    def family_maps(self, names=None):
        return [self.member(n) for n in (self.family if names is None else names)]

    def require(self, *attrs):
        missing = [a for a in attrs
                   if getattr(self, a) is None or (isinstance(getattr(self, a), (list, dict)) and not getattr(self, a))]
        if missing:
            raise InputError(f"task {self.task!r} requires scenario fields {missing}")

    @classmethod
    def from_json(cls, obj: dict, base_dir: Path | None = None) -> "Scenario":
        if not isinstance(obj, dict):
            raise InputError("scenario must be a JSON object")
        if obj.get("schema", SCHEMA) != SCHEMA:
            raise InputError(f"unsupported scenario schema {obj.get('schema')!r}")
        task = obj.get("task")
        if task not in TASKS:
            raise InputError(f"task must be one of {list(TASKS)}", task=task)
        base_dir = base_dir or Path(".")
        body = body_from_json(obj["body"]) if "body" in obj else None
        space = None
        if "space" in obj:
            sp = obj["space"]
            dim = sp.get("dim", sp.get("dimension", body.dim if body is not None else None))
            if dim is None:
                raise InputError("space needs a dimension")
            space = NormSpec(sp.get("norm", "euclidean"), int(dim))
        points = obj.get("points")
        if isinstance(points, str):
            points = read_points_csv(base_dir / points)
        if points is not None:
            points = np.atleast_2d(np.asarray(points, dtype=float))
        if space is None:
            dim = body.dim if body is not None else (points.shape[1] if points is not None else None)
            space = NormSpec("euclidean", dim) if dim else None
        if body is not None and space is not None and body.dim != space.dimension:
            raise InputError("body and space dimensions differ")
        maps = {}
        for name, expr in (obj.get("maps") or {}).items():
            maps[name] = map_from_json(expr, maps)
        family = list(obj.get("family") or [])
        unknown = [n for n in family if n not in maps]
        if unknown:
            raise InputError(f"family references unknown maps {unknown}")
        system = obj.get("system")
        if isinstance(system, str):
            system = json.loads((base_dir / system).read_text())
        tolerances = dict(obj.get("tolerances") or {})
        bad = [k for k in tolerances if k not in DEFAULT_TOLERANCES]
        if bad:
            raise InputError(f"unknown tolerance keys {bad}")
        sc = cls(
            task=task, space=space, body=body, maps=maps, family=family,
            tolerances=tolerances, seed=int(obj.get("seed", 0)), name=str(obj.get("name", "")),
            x=None if obj.get("x") is None else as_point(obj["x"]),
            s=obj.get("s"), schedule=obj.get("schedule"), points=points,
            system=FiniteSystem.from_json(system) if system is not None else None,
            options=dict(obj.get("options") or {}), output=dict(obj.get("output") or {}),
        )
        return sc


def read_points_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if rows:
                    raise InputError(f"non-numeric row in {path}", row=row)
    if not rows:
        raise InputError(f"no points in {path}")
    return np.array(rows)


def parse_points(text: str) -> np.ndarray:
    """``"0,0;2,0"`` -> 2x2 array."""
    try:
        return np.array([[float(v) for v in p.split(",")] for p in text.split(";") if p.strip()])
    except ValueError as exc:
        raise InputError(f"cannot parse points {text!r}") from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    obj = json.loads(path.read_text())
    return Scenario.from_json(obj, path.parent)


# -- tasks --------------------------------------------------------------------

class Run:
    """Collects results, verdicts and CSV traces for one task."""

    def __init__(self, sc: Scenario, tol_override=None):
        self.sc = sc
        self.tol = {**DEFAULT_TOLERANCES, **sc.tolerances}
        if tol_override is not None:
            self.tol["certificate"] = tol_override
        self.verdicts = []
        self.traces = {}

    def verdict(self, name, passed):
        self.verdicts.append({"name": name, "pass": bool(passed)})
        log.info("%s: %s", name, "pass" if passed else "FAIL")

    @property
    def passed(self):
        return all(v["pass"] for v in self.verdicts)


def _split_T_R(run: Run):
    """``T`` is the named map (default: last family member); ``R`` retracts onto the rest."""
    sc = run.sc
    names = list(sc.family)
    t_name = sc.options.get("T", names[-1] if names else None)
    if t_name is None:
        raise InputError("no map to solve for: set 'family' or options.T")
    rest = [n for n in names if n != t_name]
    T = sc.member(t_name)
    R = None
    if rest:
        R = build_retraction(sc.family_maps(rest), sc.body, sc.space,
                             stabilization_tol=run.tol["stabilization"], seed=sc.seed)
    return t_name, rest, T, R


def task_certify(run: Run):
    sc = run.sc
    sc.require("body", "family")
    props = sc.options.get("properties", ["nonexpansive", "commuting"])
    n = sc.options.get("sampleCount", 500)
    tol = run.tol["certificate"]
    certs = []
    for name in sc.family:
        m = sc.member(name)
        if "nonexpansive" in props:
            certs.append((name, certify_nonexpansive(m, sc.body, sc.space, n, tol, sc.seed)))
        if "firm" in props:
            if sc.space.kind != "euclidean":
                raise ConfigurationError("firm nonexpansiveness is certified in the euclidean norm only")
            certs.append((name, certify_firmly_nonexpansive(m, sc.body, n, tol=tol, seed=sc.seed)))
    if "commuting" in props and len(sc.family) > 1:
        certs.append(("family", certify_commuting(sc.family_maps(), sc.body, tol=run.tol["commuting"],
                                                  seed=sc.seed, space=sc.space)))
    out = []
    for name, c in certs:
        run.verdict(f"{c.property}[{name}]", c.passed)
        out.append({"map": name, **c.to_json()})
    return {"certificates": out}


def task_retract(run: Run):
    sc = run.sc
    sc.require("body", "family")
    fam = sc.family_maps()
    R = build_retraction(fam, sc.body, sc.space,
                         s_schedule=_schedule(sc.schedule, DEFAULT_BUILD_SCHEDULE),
                         stabilization_tol=run.tol["stabilization"],
                         probe_count=sc.options.get("probeCount", DEFAULT_PROBES), seed=sc.seed)
    cert = certify_retraction(R, fam, sc.body, sc.space, sample_count=sc.options.get("sampleCount", 64),
                              tol=run.tol["range"], check_firm=sc.options.get("checkFirm", False),
                              nonexpansive_tol=run.tol["nonexpansive"], seed=sc.seed)
    for k, v in cert.passes.items():
        run.verdict(k, v)
    result = {
        "retraction": R.to_json(),
        "certificate": cert.to_json(),
        "rangeResidual": max(cert.range_residuals) if cert.range_residuals else 0.0,
        "rangeBound": R.range_bound(),
    }
    run.traces["trace"] = list(stabilization_rows(R))
    res = sc.options.get("gridResolution")
    if res:
        d = sc.body.dim
        rows = [tuple(f"x{i}" for i in range(d)) + tuple(f"r{i}" for i in range(d))]
        for p in probe_grid(sc.body, float(res)):
            rows.append(tuple(p.tolist()) + tuple(R(p).tolist()))
        run.traces["grid"] = rows
    tr = sc.options.get("transfer")
    if tr:
        if len(fam) < 2:
            raise InputError("transfer check needs a family of at least two maps")
        prev = R.previous
        cert_t = apfs_transfer_check(fam[-1], fam[:-1], prev, sc.body, tr["x"],
                                     _schedule(tr.get("schedule"), DEFAULT_S_SCHEDULE),
                                     tol=run.tol["transfer"], space=sc.space)
        run.verdict(cert_t.property, cert_t.passed)
        result["transfer"] = cert_t.to_json()
    return result


def task_resolvent(run: Run):
    sc = run.sc
    sc.require("body", "family", "x", "s")
    t_name, rest, T, R = _split_T_R(run)
    rep = resolvent_solve(T, R, float(sc.s), sc.x, sc.body, tol=run.tol["solver"])
    F = rep.fixed_point
    resid = sc.space.norm(T(F if R is None else R(F)) - F)
    bound = diameter(sc.body, sc.space) / float(sc.s)
    run.verdict("residualBound", resid <= bound + run.tol["certificate"])
    return {"T": t_name, "retractedOnto": rest, "s": float(sc.s), "x": sc.x.tolist(),
            "report": rep.to_json(), "residual": resid, "bound": bound}


def task_apfs(run: Run):
    sc = run.sc
    sc.require("body", "family", "x")
    t_name, rest, T, R = _split_T_R(run)
    cert = apfs_certify(T, R, sc.x, sc.body, sc.space, _schedule(sc.schedule, DEFAULT_S_SCHEDULE),
                        tol=run.tol["certificate"])
    run.verdict("apfs", cert.passed)
    run.traces["trace"] = list(cert.csv_rows())
    return {"T": t_name, "retractedOnto": rest, "x": sc.x.tolist(), "certificate": cert.to_json()}


def task_center(run: Run):
    sc = run.sc
    sc.require("points")
    tol = run.tol["certificate"]
    res = chebyshev_center(sc.points, sc.space, tol)
    run.verdict("enclosure", res.encloses)
    out = {"center": res.to_json()}
    if sc.options.get("checkInvariance"):
        if not sc.family:
            raise InputError("--check-invariance needs maps in the family")
        inv = []
        for name in sc.family:
            c = invariance_check(sc.member(name), sc.points, sc.space, tol)
            run.verdict(f"centerInvariance[{name}]", c.passed)
            inv.append({"map": name, **c.to_json()})
        out["invariance"] = inv
    return out


def task_pipeline(run: Run):
    sc = run.sc
    sc.require("points", "family")
    tol = run.tol["certificate"]
    res = chebyshev_center(sc.points, sc.space, tol)
    run.verdict("enclosure", res.encloses)
    inv = []
    for name in sc.family:
        c = invariance_check(sc.member(name), sc.points, sc.space, tol)
        run.verdict(f"centerInvariance[{name}]", c.passed)
        inv.append({"map": name, **c.to_json()})
    point, cert = fixed_point_in_center(sc.family_maps(), sc.points, sc.space, tol)
    run.verdict("fixedPointInCenter", cert.passed)
    return {"center": res.to_json(), "invariance": inv, "fixedPoint": point.tolist(),
            "certificate": cert.to_json()}


def task_finite(run: Run):
    sc = run.sc
    sc.require("system")
    system = sc.system
    names = sc.options.get("maps")
    checks = [k for k in ("core", "gamma", "isometry", "pipeline") if sc.options.get(k)] or ["pipeline"]
    out = {"size": system.size, "tolerance": system.tolerance}
    if "core" in checks:
        core = eventual_core(system, names)
        out["core"] = core.to_json()
        run.verdict("core", bool(core.indices) or not core.commuting)
    if "gamma" in checks:
        closure = semigroup_closure(system, names)
        gamma = gamma_set(system, names, closure)
        cert = gamma_properties_check(system, names, gamma)
        out["closure"] = closure.to_json()
        out["gamma"] = cert.to_json()
        run.verdict("gammaProperties", cert.passed)
    if "isometry" in checks:
        iso = {}
        for name in system.select(names):
            c = isometry_check(system, name)
            iso[name] = c.to_json()
            run.verdict(f"isometry[{name}]", c.passed)
        out["isometry"] = iso
    if "pipeline" in checks:
        rep = finite_pipeline(system, names)
        out["pipeline"] = rep
        run.verdict("pipeline", rep["status"] != "FAIL")
    return out


TASK_FUNCS = {
    "certify": task_certify, "retract": task_retract, "resolvent": task_resolvent,
    "apfs": task_apfs, "center": task_center, "finite": task_finite, "pipeline": task_pipeline,
}


def execute(sc: Scenario, tol: float | None = None):
    """Run the scenario's task. Returns ``(report, traces)``; errors propagate."""
    run = Run(sc, tol)
    t0 = time.perf_counter()
    result = TASK_FUNCS[sc.task](run)
    report = {
        "schema": SCHEMA,
        "tool": "nonexp",
        "version": __version__,
        "task": sc.task,
        "name": sc.name,
        "seed": sc.seed,
        "space": None if sc.space is None else sc.space.to_json(),
        "tolerances": run.tol,
        "pass": run.passed,
        "verdicts": run.verdicts,
        "result": result,
        "timing": {"seconds": time.perf_counter() - t0},
    }
    return report, run.traces


def error_report(sc: Scenario | None, exc: BaseException, code: int) -> dict:
    details = getattr(exc, "details", {})
    return {
        "schema": SCHEMA,
        "tool": "nonexp",
        "version": __version__,
        "task": None if sc is None else sc.task,
        "seed": None if sc is None else sc.seed,
        "pass": False,
        "error": {"type": type(exc).__name__, "message": str(exc),
                  "details": details},
        "exitCode": code,
    }


# -- argument handling ----------------------------------------------------------

def _common(p):
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--trace", help="CSV trace (stabilization for retract, (s, residual, bound) for apfs)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--tol", type=float, help="override the certificate tolerance")
    p.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nonexp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"nonexp {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the task named in the scenario")
    _common(p)

    p = sub.add_parser("certify", help="certify the family, or 'certify apfs'")
    p.add_argument("what", nargs="?", choices=["family", "apfs"], default="family")
    p.add_argument("--x", help="anchor point, comma separated")
    _common(p)

    p = sub.add_parser("retract", help="build and certify a retraction")
    p.add_argument("--grid", help="CSV of the retraction evaluated on a grid")
    p.add_argument("--grid-resolution", type=float, default=0.1)
    _common(p)

    p = sub.add_parser("resolvent", help="solve for F_s x")
    p.add_argument("--x", help="anchor point, comma separated")
    p.add_argument("--s", type=float)
    _common(p)

    p = sub.add_parser("center", help="Tchebyshev center of a point set")
    p.add_argument("--points", help='inline points, e.g. "0,0;2,0"')
    p.add_argument("--csv", help="CSV file with one point per row")
    p.add_argument("--norm", choices=["euclidean", "sum", "max"])
    p.add_argument("--check-invariance", action="store_true")
    p.add_argument("--map", action="append", default=[], help="map JSON for --check-invariance")
    _common(p)

    p = sub.add_parser("finite", help="exact checks on a finite metric space")
    p.add_argument("--system", help="FiniteSystem JSON file")
    p.add_argument("--maps", help="comma separated map names (default: all)")
    for flag in ("core", "gamma", "isometry", "pipeline"):
        p.add_argument(f"--{flag}", action="store_true")
    _common(p)

    p = sub.add_parser("pipeline", help="center, invariance and fixed point for a finite orbit")
    _common(p)
    return ap


def _point_arg(text):
    return as_point([float(v) for v in text.split(",")])


def scenario_from_args(args) -> Scenario:
    cmd = args.command
    sc = load_scenario(args.scenario) if args.scenario else None
    if sc is None and cmd not in ("center", "finite"):
        raise InputError(f"'{cmd}' needs --scenario")
    if sc is None:
        sc = Scenario(task=cmd)
    if cmd == "certify":
        sc.task = "apfs" if args.what == "apfs" else "certify"
    elif cmd != "run":
        sc.task = cmd
    if getattr(args, "x", None):
        sc.x = _point_arg(args.x)
    if getattr(args, "s", None) is not None:
        sc.s = args.s
    if cmd == "retract" and args.grid:
        sc.options["gridResolution"] = args.grid_resolution
        sc.output["grid"] = args.grid
    if cmd == "center":
        if args.points:
            sc.points = parse_points(args.points)
        elif args.csv:
            sc.points = read_points_csv(args.csv)
        if sc.points is None:
            raise InputError("center needs --points, --csv or a scenario with points")
        if args.norm or sc.space is None or sc.space.dimension != sc.points.shape[1]:
            kind = args.norm or (sc.space.kind if sc.space else "euclidean")
            sc.space = NormSpec(kind, sc.points.shape[1])
        for i, text in enumerate(args.map):
            name = f"map{i}"
            sc.maps[name] = map_from_json(json.loads(text), sc.maps)
            sc.family.append(name)
        if args.check_invariance:
            sc.options["checkInvariance"] = True
    if cmd == "finite":
        if args.system:
            sc.system = FiniteSystem.from_json(json.loads(Path(args.system).read_text()))
        if args.maps:
            sc.options["maps"] = [m.strip() for m in args.maps.split(",")]
        for flag in ("core", "gamma", "isometry", "pipeline"):
            if getattr(args, flag):
                sc.options[flag] = True
    if args.seed is not None:
        sc.seed = args.seed
    return sc


def _write(path, text):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    sc = None
    try:
        sc = scenario_from_args(args)
        report, traces = execute(sc, args.tol)
    except (NonexpError, ValueError, KeyError, OSError) as exc:
        # malformed JSON and malformed scenario data are input errors
        code = exit_code_for(exc)
        print(f"nonexp: error: {exc}", file=sys.stderr)
        _write(args.out, dumps(error_report(sc, exc, code)))
        return code
    trace_path = args.trace or sc.output.get("trace")
    if trace_path and "trace" in traces:
        write_csv(trace_path, traces["trace"])
    if sc.output.get("grid") and "grid" in traces:
        write_csv(sc.output["grid"], traces["grid"])
    _write(args.out or sc.output.get("report"), dumps(report))
    code = EXIT_OK if report["pass"] else EXIT_FAIL
    if code:
        failed = [v["name"] for v in report["verdicts"] if not v["pass"]]
        print(f"nonexp: FAIL: {', '.join(failed)}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
