"""Evaluate the slow reference oracles on the golden scenarios and freeze them.

    python3 scripts/freeze_oracles.py            # writes tests/data/oracle_values.json

The values are checked into the repository; the tests compare the engine
against them instead of re-running the oracles on every invocation.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402
from virtslice.geometry import voronoi_tessellation  # noqa: E402
from virtslice.scenario import load_scenario  # noqa: E402


def circular_block(sc, subsets: bool) -> list[dict]:
    rows = []
    n = sc.n_bs
    for b in range(n):
        others = [j for j in range(n) if j != b]
        sets = [others]
        if subsets:
            sets = [list(c) for k in range(len(others) + 1) for c in itertools.combinations(others, k)]
        for active in sets:
            for s, sp in enumerate(sc.demands):
                val = oracles.laplace_per_bs(sc, b, sp, active)
                rows.append({"b": b, "s": s, "active": active, "value": val})
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(ROOT / "tests" / "data" / "oracle_values.json"))
    args = ap.parse_args(argv)
    out = {}
    for name, subsets in [("single_bs", False), ("three_bs", True), ("scenario_I", False)]:
        t0 = time.time()
        sc = load_scenario(ROOT / "scenarios" / f"{name}.yaml")
        out[name] = {"hash": sc.content_hash(), "circular": circular_block(sc, subsets)}
        print(name, "circular", f"{time.time() - t0:.1f}s", flush=True)

    sc = load_scenario(ROOT / "scenarios" / "three_bs.yaml")
    cells = voronoi_tessellation(sc.locations, sc.region)
    rows = []
    for cell in cells:
        for s, sp in enumerate(sc.demands):
            val = oracles.voronoi_per_bs(sc, cell, sp, range(sc.n_bs))
            rows.append({"b": cell.bs_index, "s": s, "value": val})
    out["three_bs"]["voronoi"] = rows

    for name in ("scenario_I", "scenario_II"):
        sc = load_scenario(ROOT / "scenarios" / f"{name}.yaml")
        areas = oracles.mc_cell_areas(sc.locations, sc.region.bounds)
        out.setdefault(name, {"hash": sc.content_hash()})["mc_cell_areas"] = areas.tolist()

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    print("wrote", args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
