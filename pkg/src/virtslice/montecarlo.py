"""Monte Carlo simulation of the downlink system model.

Each trial drops one tagged UE, draws the co-SP load of its serving station,
Rayleigh gains for the serving link and every interferer, and checks whether
the achieved rate meets the SP's target. Trials are processed in fixed-size
blocks; block ``k`` draws from a Philox stream keyed by ``(seed, k)``, so
results do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coverage import KM
from .geometry import voronoi_tessellation
from .scenario import Allocation, Scenario, ServiceDemand

BLOCK = 65536
Z95 = 1.959963984540054
VORONOI, CIRCULAR = "voronoi", "circular"
ACCESS, SCALE = "access", "scale"


@dataclass(frozen=True)
class TrialConfig:
    trials: int = 100_000
    seed: int = 0
    association_mode: str = CIRCULAR
    rate_semantics: str = ACCESS   # "access": Bernoulli(delta) gate; "scale": rate times delta
    workers: int = 1
    block_size: int = BLOCK

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.association_mode not in (VORONOI, CIRCULAR):
            raise ValueError(f"unknown association mode {self.association_mode!r}")
        if self.rate_semantics not in (ACCESS, SCALE):
            raise ValueError(f"unknown rate semantics {self.rate_semantics!r}")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")


@dataclass(frozen=True)
class CoverageEstimate:
    mean: float
    ci_low: float
    ci_high: float
    trials: int

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.ci_low - slack <= value <= self.ci_high + slack


def wilson(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def _blocks(trials: int, size: int):
    k = 0
    while k * size < trials:
        yield k, min(size, trials - k * size)
        k += 1


class _Model:
    """Vectorised per-block trial kernel for one (scenario, allocation, SP)."""

    def __init__(self, scenario: Scenario, alloc: Allocation, sp: ServiceDemand, s: int,
                 tc: TrialConfig):
        self.sc = scenario
        self.tc = tc
        self.sp = sp
        self.leased = np.array(alloc.leased, dtype=int)
        bs = scenario.base_stations
        self.loc = scenario.locations * KM           # metres
        self.power = np.array([b.tx_power_w for b in bs])
        self.band = np.array([b.bandwidth_hz for b in bs])
        self.noise = np.array([scenario.propagation.noise_power(b.bandwidth_hz) for b in bs])
        self.q = np.array([b.q for b in bs])
        self.alpha = scenario.propagation.alpha
        self.delta = alloc.delta[:, s].astype(float)
        self.scale = 1.0
        if self.leased.size == 0:
            return
        if tc.association_mode == VORONOI:
            cells = voronoi_tessellation(scenario.locations[self.leased], scenario.region)
            self.cell_area = np.zeros(scenario.n_bs)
            self.cell_area[self.leased] = [c.area for c in cells]
        else:
            disc = math.pi * self.q[self.leased] ** 2
            self.stratum_p = disc / disc.sum()
            self.scale = float(disc.sum() / scenario.region.area)

    def _place(self, rng, n):
        """(serving index, UE position in metres, serving distance in metres, load mean)."""
        sc = self.sc
        if self.tc.association_mode == VORONOI:
            x0, y0, x1, y1 = sc.region.bounds
            pos = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)]) * KM
            d2 = ((pos[:, None, :] - self.loc[self.leased][None, :, :]) ** 2).sum(axis=2)
            serve = self.leased[np.argmin(d2, axis=1)]
            mean_n = self.sp.lam * self.cell_area[serve]
        else:
            serve = self.leased[rng.choice(self.leased.size, size=n, p=self.stratum_p)]
            rad = self.q[serve] * np.sqrt(rng.random(n)) * KM
            ang = rng.uniform(0.0, 2.0 * math.pi, n)
            pos = self.loc[serve] + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
            mean_n = self.sp.lam * math.pi * self.q[serve] ** 2
        return serve, pos, mean_n

    def run_block(self, block: int, n: int, keep: bool = False):
        rng = block_rng(self.tc.seed, block)
        if self.leased.size == 0:
            return 0, None
        serve, pos, mean_n = self._place(rng, n)
        access = rng.random(n)
        load = 1 + rng.poisson(mean_n)
        dist = np.hypot(*(pos - self.loc[serve]).T)
        h = rng.exponential(1.0, n) * self.power[serve]
        sig = h * np.maximum(dist, 1e-9) ** -self.alpha
        interf = np.zeros(n)
        for j in self.leased:
            g = rng.exponential(1.0, n) * self.power[j]
            r = np.hypot(*(pos - self.loc[j]).T)
            contrib = g * np.maximum(r, 1e-9) ** -self.alpha
            interf += np.where(serve == j, 0.0, contrib)
        sinr = sig / (interf + self.noise[serve])
        dlt = self.delta[serve]
        if self.tc.rate_semantics == ACCESS:
            need = np.expm1(load * self.sp.kappa / self.band[serve] * math.log(2.0))
            covered = (access < dlt) & (sinr >= need)
        else:
            with np.errstate(divide="ignore", over="ignore"):
                expo = load * self.sp.kappa / (np.where(dlt > 0, dlt, 1.0) * self.band[serve])
                need = np.expm1(expo * math.log(2.0))
            covered = (dlt > 0) & (sinr >= need)
        hits = int(np.count_nonzero(covered))
        if not keep:
            return hits, None
        rows = {"serving": serve, "distance_m": dist, "load": load, "sinr": sinr,
                "access": access < dlt, "covered": covered}
        return hits, rows


def simulate_coverage(scenario: Scenario, alloc: Allocation, sp: ServiceDemand | int,
                      tc: TrialConfig, dump_csv: str | Path | None = None) -> CoverageEstimate:
    """Estimate Pr{rate >= kappa_s} for SP ``sp`` under ``alloc``.

    In circular mode the UE is dropped in the disc of a leased station chosen
    in proportion to disc area, and the estimate is rescaled by the total disc
    area over the region area (the circular model's area weighting).
    """
    s = sp if isinstance(sp, int) else scenario.demands.index(sp)
    sp = scenario.demands[s]
    model = _Model(scenario, alloc, sp, s, tc)
    if model.leased.size == 0 or not np.any(model.delta[model.leased] > 0):
        return CoverageEstimate(0.0, 0.0, 0.0, tc.trials)
    blocks = list(_blocks(tc.trials, tc.block_size))
    keep = dump_csv is not None

    def work(kb):
        return model.run_block(kb[0], kb[1], keep)

    if tc.workers > 1:
        with ThreadPoolExecutor(tc.workers) as ex:
            results = list(ex.map(work, blocks))
    else:
        results = [work(kb) for kb in blocks]
    hits = sum(r[0] for r in results)
    if keep:
        _write_csv(dump_csv, results, tc.block_size)
    lo, hi = wilson(hits, tc.trials)
    z = model.scale
    return CoverageEstimate(z * hits / tc.trials, z * lo, z * hi, tc.trials)


def _write_csv(path, results, block_size):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "serving", "distance_m", "load", "sinr", "access", "covered"])
        for k, (_, rows) in enumerate(results):
            if rows is None:
                continue
            for i in range(rows["sinr"].size):
                w.writerow([k * block_size + i, int(rows["serving"][i]), f"{rows['distance_m'][i]:.6f}",
                            int(rows["load"][i]), f"{rows['sinr'][i]:.9e}", int(rows["access"][i]),
                            int(rows["covered"][i])])


def simulate_sinr_samples(scenario: Scenario, serving: int, active, n: int, seed: int = 0) -> np.ndarray:
    """SINR draws for a UE uniform in the disc of ``serving`` with ``active`` interfering."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = block_rng(seed, 0)
    bs = scenario.base_stations
    sb = bs[serving]
    alpha = scenario.propagation.alpha
    rad = sb.q * np.sqrt(rng.random(n)) * KM
    ang = rng.uniform(0.0, 2.0 * math.pi, n)
    loc = np.array(sb.location) * KM
    pos = loc + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    sig = rng.exponential(1.0, n) * sb.tx_power_w * np.maximum(rad, 1e-9) ** -alpha
    interf = np.zeros(n)
    for j in sorted(set(active) - {serving}):
        r = np.hypot(*(pos - np.array(bs[j].location) * KM).T)
        interf += rng.exponential(1.0, n) * bs[j].tx_power_w * r ** -alpha
    return sig / (interf + scenario.propagation.noise_power(sb.bandwidth_hz))


def load_counts(scenario: Scenario, b: int, sp: ServiceDemand, n: int, seed: int = 0,
                mode: str = CIRCULAR) -> np.ndarray:
    """Co-SP UE counts (tagged UE excluded) of station ``b`` from explicit PPP draws."""
    from .scenario import sample_ppp
    rng = np.random.SeedSequence(seed)
    out = np.empty(n, int)
    loc = np.array(scenario.base_stations[b].location)
    q = scenario.base_stations[b].q
    for i, child in enumerate(rng.spawn(n)):
        pts = sample_ppp(sp.lam, scenario.region, child)
        if mode == CIRCULAR:
            out[i] = int(np.count_nonzero(np.hypot(*(pts - loc).T) <= q))
        else:
            d2 = ((pts[:, None, :] - scenario.locations[None, :, :]) ** 2).sum(axis=2)
            out[i] = int(np.count_nonzero(np.argmin(d2, axis=1) == b))
    return out
