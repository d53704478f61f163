"""Regenerate the golden scenario files in scenarios/.

The 10-station layouts are seeded draws of 10 uniform points in a 2 x 2 km
square (a PPP of intensity 2.5/km^2 conditioned on its count). The first three
points go to RP1 (small cells), the next six to RP2 and the last to RP3 (macro).
Seeds are fixed so the files can be recreated bit for bit.

    python3 scripts/make_goldens.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np

from virtslice.scenario import FORMAT_VERSION

RP = {  # rp id -> (tx power dBm, radius km, cost)
    "RP1": (23.0, 0.3, 100.0),
    "RP2": (30.0, 0.4, 200.0),
    "RP3": (46.0, 1.0, 300.0),
}
PROPAGATION = {"pathloss_exponent": 4.0, "noise_psd_dbm_per_hz": -174.0}
DEFAULT_INTENSITY = 5.0
SEEDS = {"scenario_I": 20170101, "scenario_II": 20170202}


def demands(lam=DEFAULT_INTENSITY, n=3):
    table = [("SP1", 512.0, 0.9), ("SP2", 1000.0, 0.8), ("SP3", 4000.0, 0.7)]
    return [{"sp_id": sid, "min_rate_kbps": k, "min_coverage_prob": b,
             "ue_intensity_per_km2": lam, "priority_rank": i + 1}
            for i, (sid, k, b) in enumerate(table[:n])]


def station(i, rp, x, y):
    p, q, c = RP[rp]
    return {"id": f"BS{i + 1}", "rp_id": rp, "x_km": round(float(x), 6), "y_km": round(float(y), 6),
            "tx_power_dbm": p, "bandwidth_mhz": 20.0, "coverage_radius_km": q, "lease_cost": c}


def ten_bs(name, seed):
    pts = np.random.default_rng(seed).uniform(0.0, 2.0, size=(10, 2))
    rps = ["RP1"] * 3 + ["RP2"] * 6 + ["RP3"]
    return doc(name, [station(i, rp, *pts[i]) for i, rp in enumerate(rps)])


def doc(name, stations, sps=None):
    return {"format_version": FORMAT_VERSION, "name": name,
            "region": {"width_km": 2.0, "height_km": 2.0, "origin_x_km": 0.0, "origin_y_km": 0.0},
            "propagation": dict(PROPAGATION), "base_stations": stations,
            "demands": sps if sps is not None else demands()}


def goldens():
    out = {name: ten_bs(name, seed) for name, seed in SEEDS.items()}
    out["single_bs"] = doc("single_bs", [station(0, "RP3", 1.0, 1.0)])
    out["three_bs"] = doc("three_bs", [station(0, "RP2", 0.6, 0.7),
                                       station(1, "RP2", 1.4, 0.8),
                                       station(2, "RP3", 1.0, 1.4)])
    return out


def main(outdir="scenarios"):
    import yaml
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, d in goldens().items():
        (outdir / f"{name}.yaml").write_text(yaml.safe_dump(d, sort_keys=False))
        print(outdir / f"{name}.yaml")


if __name__ == "__main__":
    main(*sys.argv[1:])
