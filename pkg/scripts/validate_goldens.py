"""Compare analytic coverage with Monte Carlo on every golden scenario.

Uses the equal split for the circular model and a full-lease equal split
for the Voronoi model, and prints one line per (scenario, SP, model).

    python3 scripts/validate_goldens.py --trials 1000000 --workers 4
"""

import argparse
from pathlib import Path

from virtslice.allocators import equal_split
from virtslice.coverage import CoverageEngine
from virtslice.geometry import voronoi_tessellation
from virtslice.montecarlo import CIRCULAR, VORONOI, TrialConfig, simulate_coverage
from virtslice.scenario import load_scenario

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--tolerance", type=float, default=0.02)
    ap.add_argument("--scenarios", nargs="*", default=None, help="golden names (default: all)")
    args = ap.parse_args(argv)

    names = args.scenarios or sorted(p.stem for p in SCENARIOS.glob("*.yaml"))
    worst = 0.0
    print(f"{'scenario':<12} {'sp':<5} {'model':<8} {'analytic':>9} {'mc':>9} {'ci':>19} {'diff':>8}")
    for name in names:
        sc = load_scenario(SCENARIOS / f"{name}.yaml")
        eng = CoverageEngine(sc)
        alloc = equal_split(sc)
        cells = voronoi_tessellation(sc.locations, sc.region)
        for s, sp in enumerate(sc.demands):
            for model in (CIRCULAR, VORONOI):
                if model == CIRCULAR:
                    a = eng.network_coverage(alloc, s)
                else:
                    a = eng.voronoi_rate_coverage(alloc, s, cells)
                e = simulate_coverage(sc, alloc, s, TrialConfig(trials=args.trials, seed=args.seed,
                                                                workers=args.workers, association_mode=model))
                diff = a - e.mean
                worst = max(worst, abs(diff))
                flag = "" if abs(diff) <= args.tolerance else "  <-- exceeds tolerance"
                print(f"{name:<12} {sp.sp_id:<5} {model:<8} {a:9.4f} {e.mean:9.4f} "
                      f"[{e.ci_low:.4f}, {e.ci_high:.4f}] {diff:+8.4f}{flag}")
    print(f"max |diff| {worst:.4f}")
    return 0 if worst <= args.tolerance else 1


if __name__ == "__main__":
    raise SystemExit(main())
