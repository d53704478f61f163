"""Sweep UE intensity on a scenario and print a cost/coverage table.

Writes the same CSV as ``virtslice sweep`` and, with --table, a compact
per-intensity summary of cost and satisfied SPs for each method.

    python3 scripts/run_sweep.py scenarios/scenario_I.yaml --multiples 0.2,1,2,4,6 --out sweep.csv
"""

import argparse
import csv
import io
import sys

from virtslice.cli import _sweep_csv, run_sweep
from virtslice.coverage import QuadratureConfig
from virtslice.scenario import load_scenario


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario")
    ap.add_argument("--multiples", default="0.2,0.5,1,2,3,4,5,6,8,12",
                    help="intensities as multiples of the BS intensity |B|/area")
    ap.add_argument("--methods", default="exact,greedy,sequential,equal-split")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None)
    ap.add_argument("--table", action="store_true")
    args = ap.parse_args(argv)

    sc = load_scenario(args.scenario)
    bs_intensity = sc.n_bs / sc.region.area
    lams = [float(m) * bs_intensity for m in args.multiples.split(",")]
    methods = args.methods.split(",")
    text = _sweep_csv(sc, run_sweep(sc, lams, methods, QuadratureConfig(), args.workers))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    if not args.table:
        if not args.out:
            sys.stdout.write(text)
        return 0
    rows = list(csv.DictReader(io.StringIO(text)))
    print(f"{'lambda':>8} " + " ".join(f"{m:>22}" for m in methods))
    for lam in dict.fromkeys(r["intensity"] for r in rows):
        cells = []
        for m in methods:
            r = next(r for r in rows if r["intensity"] == lam and r["method"] == m)
            tag = "*" if r["fallback"] == "1" else ""
            cells.append(f"{r['status'] + tag:>12} {r['cost'] or '-':>5} {r['satisfied']:>3}")
        print(f"{lam:>8} " + " ".join(cells))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
