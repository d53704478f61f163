"""Command-line interface.

    virtslice solve    --scenario FILE --method {exact,greedy,sequential,equal-split}
    virtslice sweep    --scenario FILE --intensities 1,2,5 --methods exact,greedy
    virtslice validate --scenario FILE --allocation FILE --trials N
    virtslice export-lp --scenario FILE

Exit codes: 0 ok, 1 infeasible (handled), 2 user error, 3 internal error.
Reports are byte-identical for identical inputs; wall time is only included
with ``--timing``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .allocators import SATISFIED, equal_split, greedy_allocate, sequential_allocate
from .coverage import CoverageEngine, QuadratureConfig, cached_coefficients
from .geometry import voronoi_tessellation
from .milp import build_problem1
from .montecarlo import CIRCULAR, VORONOI, TrialConfig, simulate_coverage
from .scenario import Allocation, Scenario, ScenarioError, load_scenario
from .solver import OPTIMAL, BudgetExceeded, solve_exact

METHODS = ("exact", "greedy", "sequential", "equal-split")
EXIT_OK, EXIT_INFEASIBLE, EXIT_USER, EXIT_INTERNAL = 0, 1, 2, 3
PROB_DIGITS = 6
COVER_TOL = 1e-6


class UserError(Exception):
    pass


def _p(x: float) -> float:
    return round(float(x), PROB_DIGITS)


_FLAT_LIST = re.compile(r"\[([^\[\]{}\"]*)\]")


def dumps(obj) -> str:
    """Indented JSON with lists of plain numbers kept on one line."""
    text = json.dumps(obj, indent=2)
    flat = _FLAT_LIST.sub(lambda m: "[" + ", ".join(t.strip() for t in m.group(1).split(",")) + "]", text)
    return flat + "\n"


@dataclass
class RunReport:
    scenario_hash: str
    scenario_name: str
    method: str
    requested_method: str
    status: str
    fallback: bool
    cost: float | None
    allocation: dict | None
    coverage_model: str
    coverage: dict
    monte_carlo: dict
    config: dict
    notes: list = field(default_factory=list)
    wall_time_s: float | None = None

    def to_json(self) -> str:
        d = asdict(self)
        if d["wall_time_s"] is None:
            del d["wall_time_s"]
        return dumps(d)


def _cfg(args) -> QuadratureConfig:
    kw = {}
    if getattr(args, "omega_max", None) is not None:
        kw["omega_max"] = args.omega_max
    if getattr(args, "tol", None) is not None:
        kw["rel_tol"] = args.tol
    try:
        return QuadratureConfig(**kw)
    except ValueError as exc:
        raise UserError(str(exc)) from exc


def _load(args) -> Scenario:
    if not Path(args.scenario).exists():
        raise UserError(f"scenario file not found: {args.scenario}")
    sc = load_scenario(args.scenario)
    if getattr(args, "intensity", None) is not None:
        if args.intensity <= 0:
            raise UserError("intensity must be > 0")
        sc = sc.with_intensity(args.intensity)
    return sc


def analytic_coverage(engine: CoverageEngine, alloc: Allocation, model: str, cells=None) -> list[float]:
    sc = engine.scenario
    out = []
    for s in range(sc.n_sp):
        if model == VORONOI:
            if not alloc.delta[:, s].any():
                out.append(0.0)
                continue
            full = Allocation(np.ones(sc.n_bs, int), alloc.delta)
            out.append(engine.voronoi_rate_coverage(full, s, cells))
        else:
            out.append(engine.network_coverage(alloc, s))
    return out


def simulation_allocation(alloc: Allocation, model: str) -> Allocation:
    """Allocation handed to Monte Carlo; the Voronoi model tessellates with every station."""
    if model == VORONOI:
        return Allocation(np.ones(alloc.x.size, int), alloc.delta)
    return alloc


def run_method(scenario: Scenario, method: str, engine: CoverageEngine, cache_dir=None,
               node_limit: int = 100_000) -> dict:
    """Run one allocation method; returns a plain dict consumed by reports and sweeps."""
    sc = scenario
    cells = None
    res = {"method": method, "fallback": False, "status": "ok", "notes": []}
    if method == "exact":
        r = solve_exact(sc, engine, node_limit=node_limit)
        res["nodes"] = r.nodes
        res["path"] = r.method
        if r.status == OPTIMAL:
            alloc = r.allocation
        else:
            alloc = equal_split(sc)
            res.update(applied="equal-split", fallback=True, status="infeasible")
            res["notes"].append("exact problem infeasible; equal split applied")
        model = CIRCULAR
    elif method == "greedy":
        g = greedy_allocate(sc, engine=engine)
        alloc = g.allocation
        res["order"] = [sc.base_stations[b].id for b in g.order]
        if alloc is None:
            res["status"] = "infeasible"
        model = CIRCULAR
    elif method == "sequential":
        cells = voronoi_tessellation(sc.locations, sc.region)
        o = sequential_allocate(sc, engine=engine, cells=cells)
        alloc = o.allocation
        res["sp_status"] = o.status
        model = VORONOI
    elif method == "equal-split":
        alloc = equal_split(sc)
        model = CIRCULAR
    else:
        raise UserError(f"unknown method {method!r}")
    res["allocation"] = alloc
    res["model"] = model
    res["cells"] = cells
    if alloc is not None:
        res["coverage"] = analytic_coverage(engine, alloc, model, cells)
        res["cost"] = alloc.cost(sc)
    else:
        res["coverage"] = None
        res["cost"] = None
    return res


def _satisfied(sc: Scenario, res: dict) -> int:
    if res["method"] == "sequential" and "sp_status" in res:
        return sum(1 for v in res["sp_status"].values() if v == SATISFIED)
    if res["coverage"] is None:
        return 0
    return sum(1 for c, sp in zip(res["coverage"], sc.demands) if c >= sp.beta - COVER_TOL)


def build_report(args, sc: Scenario, res: dict, cfg: QuadratureConfig, t0: float) -> RunReport:
    alloc = res["allocation"]
    coverage = {}
    mc = {}
    if res["coverage"] is not None:
        for s, sp in enumerate(sc.demands):
            coverage[sp.sp_id] = {"analytic": _p(res["coverage"][s]), "beta": sp.beta,
                                  "met": bool(res["coverage"][s] >= sp.beta - COVER_TOL)}
        if args.trials > 0:
            tc = TrialConfig(trials=args.trials, seed=args.seed, association_mode=res["model"],
                             workers=args.workers)
            sim = simulation_allocation(alloc, res["model"])
            for s, sp in enumerate(sc.demands):
                e = simulate_coverage(sc, sim, s, tc)
                mc[sp.sp_id] = {"mean": _p(e.mean), "ci_low": _p(e.ci_low), "ci_high": _p(e.ci_high),
                                "trials": e.trials}
    status = res["status"]
    if "sp_status" in res:
        for sid, st in res["sp_status"].items():
            coverage.setdefault(sid, {})["sequential_status"] = st
    config = {"method": args.method, "seed": args.seed, "trials": args.trials,
              "omega_max": cfg.omega_max, "tol": cfg.rel_tol,
              "intensity": getattr(args, "intensity", None), "scenario": str(args.scenario)}
    return RunReport(
        scenario_hash=sc.content_hash(), scenario_name=sc.name, method=res.get("applied", res["method"]),
        requested_method=args.method, status=status, fallback=res["fallback"],
        cost=res["cost"], allocation=alloc.to_dict(sc) if alloc is not None else None,
        coverage_model=res["model"], coverage=coverage, monte_carlo=mc, config=config,
        notes=res["notes"],
        wall_time_s=round(time.monotonic() - t0, 3) if args.timing else None)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_solve(args) -> int:
    t0 = time.monotonic()
    sc = _load(args)
    cfg = _cfg(args)
    engine = CoverageEngine(sc, cfg, workers=args.workers)
    res = run_method(sc, args.method, engine, args.cache_dir)
    report = build_report(args, sc, res, cfg, t0)
    if args.format == "csv":
        _emit(_sweep_csv(sc, [(getattr(args, "intensity", None) or sc.demands[0].lam, res)]), args.out)
    else:
        _emit(report.to_json(), args.out)
    return EXIT_INFEASIBLE if res["status"] == "infeasible" else EXIT_OK


def sweep_columns(sc: Scenario) -> list[str]:
    cols = ["intensity", "method", "status", "fallback", "cost", "n_leased", "satisfied"]
    cols += [f"coverage_{sp.sp_id}" for sp in sc.demands]
    cols += ["error"]
    return cols


def _sweep_csv(sc: Scenario, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(sweep_columns(sc))
    for lam, res in rows:
        if "error" in res and res.get("allocation") is None and res.get("status") == "error":
            w.writerow([f"{lam:g}", res["method"], "error", "", "", "", ""]
                       + [""] * sc.n_sp + [res["error"]])
            continue
        alloc = res["allocation"]
        cov = res["coverage"] or [None] * sc.n_sp
        w.writerow([f"{lam:g}", res["method"], res["status"], int(res["fallback"]),
                    "" if res["cost"] is None else f"{res['cost']:g}",
                    "" if alloc is None else len(alloc.leased),
                    _satisfied(sc, res)]
                   + ["" if c is None else f"{c:.{PROB_DIGITS}f}" for c in cov] + [""])
    return buf.getvalue()


def run_sweep(sc0: Scenario, intensities, methods, cfg: QuadratureConfig, workers: int = 1,
              cache_dir=None):
    engine = CoverageEngine(sc0, cfg, workers=workers)
    rows = []
    for lam in intensities:
        sc = sc0.with_intensity(lam)
        eng = engine.rebind(sc)
        for m in methods:
            try:
                res = run_method(sc, m, eng, cache_dir)
            except (BudgetExceeded, ArithmeticError, RuntimeError, ValueError) as exc:
                res = {"method": m, "status": "error", "allocation": None, "error": str(exc),
                       "fallback": False, "coverage": None, "cost": None}
            rows.append((lam, res))
    return rows


def _floats(text: str) -> list[float]:
    if text is None or text.strip() == "":
        return []
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UserError(f"bad number list {text!r}") from exc


def cmd_sweep(args) -> int:
    sc = _load(args)
    cfg = _cfg(args)
    lams = _floats(args.intensities)
    if any(x <= 0 for x in lams) or lams != sorted(lams):
        raise UserError("intensities must be positive and ascending")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise UserError(f"unknown method {m!r}")
    rows = run_sweep(sc, lams, methods, cfg, args.workers, args.cache_dir)
    _emit(_sweep_csv(sc, rows), args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = _load(args)
    cfg = _cfg(args)
    path = Path(args.allocation)
    if not path.exists():
        raise UserError(f"allocation file not found: {path}")
    try:
        raw = json.loads(path.read_text())
        raw = raw.get("allocation", raw) if isinstance(raw, dict) else raw
        alloc = Allocation.from_dict(raw)
    except (ValueError, KeyError, TypeError) as exc:
        raise UserError(f"bad allocation file: {exc}") from exc
    if alloc.delta.shape != (sc.n_bs, sc.n_sp):
        raise UserError(f"allocation shape {alloc.delta.shape} does not match scenario "
                        f"({sc.n_bs}, {sc.n_sp})")
    violations = alloc.violations()
    engine = CoverageEngine(sc, cfg, workers=args.workers)
    mode = args.association
    cells = voronoi_tessellation(sc.locations, sc.region) if mode == VORONOI else None
    tc = TrialConfig(trials=args.trials, seed=args.seed, association_mode=mode, workers=args.workers)
    rows = {}
    ok = not violations
    analytic = analytic_coverage(engine, alloc, mode, cells)
    for s, sp in enumerate(sc.demands):
        a = analytic[s]
        e = simulate_coverage(sc, simulation_allocation(alloc, mode), s, tc)
        passed = bool(abs(a - e.mean) <= args.tolerance)
        ok &= passed
        rows[sp.sp_id] = {"analytic": _p(a), "mc_mean": _p(e.mean), "ci_low": _p(e.ci_low),
                          "ci_high": _p(e.ci_high), "abs_diff": _p(abs(a - e.mean)), "pass": passed}
    out = {"scenario_hash": sc.content_hash(), "association": mode, "trials": args.trials,
           "seed": args.seed, "tolerance": args.tolerance, "invariant_violations": violations,
           "per_sp": rows, "pass": ok}
    _emit(dumps(out), args.out)
    return EXIT_OK if ok else EXIT_INFEASIBLE


def cmd_export_lp(args) -> int:
    sc = _load(args)
    cfg = _cfg(args)
    engine = CoverageEngine(sc, cfg, workers=args.workers)
    model, _ = build_problem1(sc, cached_coefficients(engine, args.cache_dir))
    _emit(model.to_lp(), args.out)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="virtslice", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", required=True)
        sp.add_argument("--omega-max", type=float, default=None)
        sp.add_argument("--tol", type=float, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--cache-dir", default=None)
        sp.add_argument("--intensity", type=float, default=None,
                        help="override every SP's UE intensity (UEs/km^2)")

    s = sub.add_parser("solve")
    common(s)
    s.add_argument("--method", choices=METHODS, default="exact")
    s.add_argument("--trials", type=int, default=0)
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--timing", action="store_true")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep")
    common(w)
    w.add_argument("--intensities", default="")
    w.add_argument("--methods", default="exact,greedy")
    w.add_argument("--format", choices=("csv",), default="csv")
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate")
    common(v)
    v.add_argument("--allocation", required=True)
    v.add_argument("--trials", type=int, default=100_000)
    v.add_argument("--association", choices=(CIRCULAR, VORONOI), default=CIRCULAR)
    v.add_argument("--tolerance", type=float, default=0.02)
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("export-lp")
    common(e)
    e.set_defaults(func=cmd_export_lp)
    return p


def _fail(code: int, kind: str, message: str) -> int:
    sys.stdout.write(json.dumps({"error": {"type": kind, "message": message}}) + "\n")
    return code


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USER if exc.code else EXIT_OK
    if getattr(args, "trials", 0) < 0:
        return _fail(EXIT_USER, "usage", "trials must be >= 0")
    try:
        return args.func(args)
    except UserError as exc:
        return _fail(EXIT_USER, "usage", str(exc))
    except ScenarioError as exc:
        return _fail(EXIT_USER, "validation", str(exc))
    except BudgetExceeded as exc:
        return _fail(EXIT_INTERNAL, "budget", str(exc))
    except Exception as exc:  # noqa: BLE001 - surfaced as machine-readable error
        return _fail(EXIT_INTERNAL, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
