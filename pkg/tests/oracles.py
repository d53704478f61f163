"""Independent reference computations used by the test suite.

Nothing here goes through the coverage engine's quadrature. The per-station
circular coverage uses the Rayleigh Laplace transform with nested adaptive
QUADPACK integration, and the Voronoi coverage uses a brute-force polar grid
with a point-in-polygon test. Both are slow and only meant for small cases;
their outputs for the golden scenarios are frozen in tests/data by
scripts/freeze_oracles.py.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, stats

KM = 1000.0


def threshold(sp, bs, load):
    return math.expm1(load * sp.kappa / bs.bandwidth_hz * math.log(2.0))


def mean_load(sp, bs):
    return max(sp.lam * math.pi * bs.q ** 2, 1.0)


def laplace_per_bs(scenario, b, sp, active, load=None):
    """Pr{SINR >= T} for a UE uniform in the disc of ``b``, independent angle per interferer."""
    bs = scenario.base_stations
    sb = bs[b]
    alpha = scenario.propagation.alpha
    t = threshold(sp, sb, mean_load(sp, sb) if load is None else load)
    noise = scenario.propagation.noise_power(sb.bandwidth_hz)
    others = [j for j in active if j != b]

    def cond(u):
        s = t * sb.mu * (KM * u) ** alpha
        val = math.exp(-s * noise)
        for j in others:
            d = math.dist(bs[j].location, sb.location)

            def f(v, d=d, j=j):
                r2 = max(u * u + d * d - 2 * u * d * math.cos(v), 0.0)
                a = bs[j].mu * (KM * math.sqrt(r2)) ** alpha
                return a / (a + s)

            val *= integrate.quad(f, 0.0, math.pi, limit=200, epsabs=1e-13, epsrel=1e-12)[0] / math.pi
        return val * 2.0 * u / sb.q ** 2

    brk = sorted(d for d in (math.dist(bs[j].location, sb.location) for j in others) if d < sb.q)
    return integrate.quad(cond, 0.0, sb.q, points=brk or None, limit=400, epsabs=1e-12)[0]


def circular_network_coverage(scenario, delta, s, leased=None):
    """Area-weighted sum over leased stations, mean load, all leased stations interfering."""
    leased = [b for b in range(scenario.n_bs) if leased is None or b in leased]
    sp = scenario.demands[s]
    total = 0.0
    for b in leased:
        if delta[b, s] == 0:
            continue
        w = math.pi * scenario.base_stations[b].q ** 2 / scenario.region.area
        total += delta[b, s] * w * laplace_per_bs(scenario, b, sp, leased)
    return total


def _inside(poly, px, py):
    ok = np.ones(px.shape, bool)
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        ok &= (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]) >= -1e-12
    return ok


def voronoi_per_bs(scenario, cell, sp, interferers, n_u=300, n_v=4000, eps=1e-9):
    """In-cell coverage of ``cell`` (load 1 + Poisson(lam * area)), on a polar grid.

    The ring density and the angle law both come from the grid fraction of
    each circle lying inside the cell, so no geometry helper is reused.
    """
    bs = scenario.base_stations
    b = cell.bs_index
    sb = bs[b]
    alpha = scenario.propagation.alpha
    noise = scenario.propagation.noise_power(sb.bandwidth_hz)
    poly = np.asarray(cell.polygon)
    rmax = float(np.max(np.hypot(poly[:, 0] - sb.x_km, poly[:, 1] - sb.y_km)))
    xg, wg = np.polynomial.legendre.leggauss(n_u)
    u = (xg + 1) / 2 * rmax
    v = (np.arange(n_v) + 0.5) * 2 * math.pi / n_v
    ux = u[:, None] * np.cos(v) + sb.x_km
    uy = u[:, None] * np.sin(v) + sb.y_km
    ins = _inside(poly, ux, uy).astype(float)
    frac = ins.mean(axis=1)
    area = float(0.5 * abs(np.dot(poly[:, 0], np.roll(poly[:, 1], -1)) - np.dot(poly[:, 1], np.roll(poly[:, 0], -1))))
    wu = wg / 2 * rmax * 2 * math.pi * u * frac / area
    wv = ins / np.maximum(ins.sum(axis=1, keepdims=True), 1.0)
    mean_n = sp.lam * area
    n = np.arange(int(stats.poisson.ppf(eps / 2, mean_n)), int(stats.poisson.ppf(1 - eps / 2, mean_n)) + 1)
    p = stats.poisson.pmf(n, mean_n)
    total = 0.0
    for pn, load in zip(p, n + 1):
        s = threshold(sp, sb, load) * sb.mu * (KM * u) ** alpha
        lt = np.exp(-s * noise)
        for j in interferers:
            if j == b:
                continue
            r = np.hypot(ux - bs[j].x_km, uy - bs[j].y_km)
            a = bs[j].mu * (KM * r) ** alpha
            lt = lt * ((a / (a + s[:, None])) * wv).sum(axis=1)
        total += pn * float(lt @ wu)
    return total


def mc_cell_areas(sites, region_bounds, n=2_000_000, seed=0):
    """Nearest-site area estimate for each site by uniform sampling."""
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = region_bounds
    pts = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    sites = np.asarray(sites)
    d2 = ((pts[:, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
    counts = np.bincount(np.argmin(d2, axis=1), minlength=len(sites))
    return counts / n * (x1 - x0) * (y1 - y0)

