"""Analytic rate-coverage engine.

The interference density is never tabulated on the main path. For a serving
station ``b`` and a UE at distance ``u`` the conditional coverage is

    Pr{SINR >= T | u} = exp(-s sigma^2) * E[exp(-s I)],   s = mu_b T u^alpha,

and ``E[exp(-s I)] = int_0^inf f_I(c) exp(-s c) dc`` is evaluated from the
interference characteristic function by exchanging the ``c`` and ``omega``
integrals (Parseval):

    E[exp(-s I)] = (1/pi) Re int_0^inf phi_I(omega) / (s + i omega) d omega.

The ``1/(s + i omega)`` part of the integrand is integrated in closed form and
the remainder ``(phi_I - 1)/(s + i omega)`` by Gauss-Legendre panels that are
geometric in ``omega``. All path-loss distances are in metres (1 m reference);
geometry is in km.
"""

from __future__ import annotations

import math
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, stats

from .geometry import VoronoiCell, cell_arcs, cell_distance_pdf
from .scenario import Allocation, BaseStation, Scenario, ServiceDemand

KM = 1000.0  # path loss is evaluated with distances in metres


class QuadratureError(RuntimeError):
    """A quadrature did not reach its tolerance within the evaluation budget."""


class ExpansionTooLarge(ValueError):
    pass


class _PointMass:
    """Interference with no active interferers: all mass at zero."""

    def __repr__(self):
        return "POINT_MASS_AT_ZERO"


POINT_MASS_AT_ZERO = _PointMass()


@dataclass(frozen=True)
class QuadratureConfig:
    """Numerical domains and resolutions for the coverage integrals.

    ``omega_max`` is the upper end of the omega integral in units of the
    largest mean interferer rate ``E[mu_j r_j^alpha]`` seen from the UE, so the
    single-interferer characteristic function modulus at the cut is about
    ``1/omega_max``. ``omega_lo`` is the start of the geometric panels in units
    of ``1/E[I]``.
    """

    omega_max: float = 1e8
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    poisson_tail_eps: float = 1e-6
    rate_grid_points: int = 2001
    max_expansion_size: int = 12
    omega_lo: float = 1e-10
    omega_panel_ratio: float = 4.0
    omega_nodes: int = 8
    u_base_panels: int = 4
    u_nodes: int = 8
    u_grading_depth: int = 10
    angle_nodes: int = 8

    def __post_init__(self):
        if not self.omega_max > 0:
            raise ValueError("omega_max must be > 0")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be > 0")
        if not 0 < self.poisson_tail_eps <= 1e-3:
            raise ValueError("poisson_tail_eps must lie in (0, 1e-3]")
        if self.rate_grid_points < 3:
            raise ValueError("rate_grid_points must be >= 3")

    def refined(self) -> "QuadratureConfig":
        """A config with roughly twice the resolution in every direction."""
        from dataclasses import replace
        return replace(self, omega_nodes=2 * self.omega_nodes, u_nodes=2 * self.u_nodes,
                       angle_nodes=2 * self.angle_nodes,
                       u_grading_depth=self.u_grading_depth + 4,
                       omega_max=self.omega_max * 100, omega_lo=self.omega_lo / 100)


def mean_load(lam: float, q: float) -> float:
    return lam * math.pi * q * q


def sinr_threshold(sp: ServiceDemand, bs: BaseStation, load: float | None = None) -> float:
    """SINR needed for rate ``kappa_s`` when ``load`` UEs share the station.

    Without an explicit load the mean-load approximation is used, clamped to
    one UE.
    """
    if load is None:
        load = max(mean_load(sp.lam, bs.q), 1.0)
    expo = load * sp.kappa / bs.bandwidth_hz * math.log(2.0)
    return math.expm1(expo) if expo < 700.0 else math.inf


@lru_cache(maxsize=None)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def _gl(edges: Sequence[float], n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _leggauss(n)
    edges = np.asarray(edges, float)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w[None, :]
    return nodes.ravel(), weights.ravel()


def angle_rule(u: float, d: float, n: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on [0, pi] and weights summing to one for averaging over the UE angle.

    The integrand depends on ``cos v`` only, so the half circle suffices. When
    the UE ring passes close to the interferer the panels are graded toward
    ``v = 0``, where the distance is smallest.
    """
    if u <= 0 or d <= 0:
        edges = [0.0, math.pi]
    else:
        width = abs(u - d) / math.sqrt(u * d)
        if width >= 0.25:
            edges = np.linspace(0.0, math.pi, 5)
        else:
            width = max(width, 1e-9)
            k = int(math.ceil(math.log2(math.pi / width)))
            edges = [0.0] + [width * 2.0 ** i for i in range(k)] + [math.pi]
            edges = sorted(set(e for e in edges if e <= math.pi))
    v, w = _gl(edges, n)
    return v, w / math.pi


def _rates(bs_j: BaseStation, u: float, d: float, v: np.ndarray, alpha: float) -> np.ndarray:
    """mu_j r_j^alpha at the angle nodes (1/W)."""
    r = np.sqrt((u - d) ** 2 + 4.0 * u * d * np.sin(0.5 * v) ** 2)  # no cancellation near u = d
    return bs_j.mu * (KM * r) ** alpha


def interferer_cf(j: BaseStation, serving: BaseStation, u: float, omega, alpha: float,
                  n_angle: int = 8):
    """Characteristic function of the interference from ``j`` at UE distance ``u``.

    The UE angle about the serving station is uniform; fading is exponential
    with mean equal to the transmit power of ``j``.
    """
    d = math.dist(j.location, serving.location)
    v, w = angle_rule(u, d, n_angle)
    a = _rates(j, u, d, v, alpha)
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    out = (w[None, :] * (a[None, :] / (a[None, :] - 1j * om[:, None]))).sum(axis=1)
    out[om == 0.0] = 1.0
    return complex(out[0]) if np.ndim(omega) == 0 else out


def cell_angle_rule(cell: VoronoiCell, u: float, n: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Absolute-angle nodes on the in-cell arcs at radius ``u``, weights summing to one."""
    edges = []
    for a, b in cell_arcs(cell, u):
        k = max(1, int(math.ceil((b - a) / (math.pi / 4))))
        edges.append(np.linspace(a, b, k + 1))
    if not edges:
        return np.zeros(1), np.ones(1)
    parts = [_gl(e, n) for e in edges]
    v = np.concatenate([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    return v, w / w.sum()


class _CF:
    """Angle-averaged characteristic-function factors for a fixed server and UE distance.

    Without a cell the UE angle is uniform on the full circle; with a Voronoi
    cell it is uniform on the part of the circle inside the cell.
    """

    def __init__(self, scenario: Scenario, b: int, u: float, interferers: Sequence[int], n_angle: int,
                 cell: VoronoiCell | None = None):
        alpha = scenario.propagation.alpha
        sb = scenario.base_stations[b]
        self.parts = []
        if cell is not None:
            v, w = cell_angle_rule(cell, u, n_angle)
            px = sb.x_km + u * np.cos(v)
            py = sb.y_km + u * np.sin(v)
        for j in interferers:
            sj = scenario.base_stations[j]
            if cell is None:
                d = math.dist(sj.location, sb.location)
                v, w = angle_rule(u, d, n_angle)
                self.parts.append((_rates(sj, u, d, v, alpha), w))
            else:
                r = np.hypot(px - sj.x_km, py - sj.y_km)
                self.parts.append((sj.mu * (KM * r) ** alpha, w))

    def mean_rate(self) -> float:
        return max((float(w @ a) for a, w in self.parts), default=0.0)

    def mean_interference(self) -> float:
        return float(sum(w @ (1.0 / a) for a, w in self.parts))

    def factors(self, omega: np.ndarray) -> np.ndarray:
        """(n_interferers, n_omega) array of phi_j(omega)."""
        out = np.empty((len(self.parts), omega.size), dtype=complex)
        for i, (a, w) in enumerate(self.parts):
            out[i] = (a[None, :] / (a[None, :] - 1j * omega[:, None])) @ w
        return out

    def product(self, omega: np.ndarray) -> np.ndarray:
        f = self.factors(np.atleast_1d(omega))
        return np.prod(f, axis=0) if len(f) else np.ones(np.atleast_1d(omega).size, complex)


def omega_rule(cf: _CF, cfg: QuadratureConfig) -> tuple[np.ndarray, np.ndarray, float]:
    """Nodes/weights on [0, Omega] and the cut ``Omega`` for one (server, u)."""
    hi = cfg.omega_max * cf.mean_rate()
    lo = cfg.omega_lo / cf.mean_interference()
    lo = min(lo, hi * 1e-3)
    n_pan = max(1, int(math.ceil(math.log(hi / lo) / math.log(cfg.omega_panel_ratio))))
    t_edges = np.linspace(math.log(lo), math.log(hi), n_pan + 1)
    t, wt = _gl(t_edges, cfg.omega_nodes)
    om = np.exp(t)
    x0, w0 = _gl([0.0, lo], cfg.omega_nodes)
    return np.concatenate([x0, om]), np.concatenate([w0, wt * om]), hi


def u_rule(lo: float, hi: float, breaks: Iterable[float], cfg: QuadratureConfig,
           graded: Iterable[float] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Composite GL on [lo, hi] with panel edges at ``breaks`` and geometric
    refinement toward each point in ``graded``."""
    span = hi - lo
    pts = set(np.linspace(lo, hi, cfg.u_base_panels + 1).tolist())
    pts.update(c for c in breaks if lo < c < hi)
    for c in graded:
        if not lo < c < hi:
            continue
        pts.add(c)
        for k in range(1, cfg.u_grading_depth + 1):
            for p in (c - span * 2.0 ** -k, c + span * 2.0 ** -k):
                if lo < p < hi:
                    pts.add(p)
    edges = [lo]
    for p in sorted(pts)[1:]:
        if p - edges[-1] > 1e-9 * span:  # merge near-duplicate breakpoints
            edges.append(p)
    edges[-1] = hi
    return _gl(edges, cfg.u_nodes)


@dataclass
class _Kernel:
    """Cached CF factors on the (u, omega) grid for one serving station.

    ``interferers`` lists the station indices behind the first axis of
    ``phi``. ``uw`` already contains the distance density.
    """

    b: int
    interferers: tuple[int, ...]
    u: np.ndarray
    uw: np.ndarray
    omega: np.ndarray      # (n_u, n_omega), zero-weight padding
    omega_w: np.ndarray    # (n_u, n_omega)
    omega_hi: np.ndarray   # (n_u,)
    phi: np.ndarray        # (n_interferers, n_u, n_omega)
    signal_rate: np.ndarray  # mu_b (1000 u)^alpha, (n_u,)
    noise: float
    _col: dict = field(default_factory=dict, repr=False)

    def column(self, j: int) -> int:
        if not self._col:
            self._col.update({jj: i for i, jj in enumerate(self.interferers)})
        return self._col[j]

    def product(self, active: Iterable[int]) -> np.ndarray | None:
        cols = [self.column(j) for j in sorted(set(active))]
        if not cols:
            return None
        out = self.phi[cols[0]].copy()
        for c in cols[1:]:
            out *= self.phi[c]
        return out

    def laplace(self, prod: np.ndarray | None, s: np.ndarray) -> np.ndarray:
        """E[exp(-s I) | u] for each u node; ``s`` has shape (..., n_u)."""
        if prod is None:
            return np.ones_like(s)
        s = np.asarray(s, float)
        k = 1.0 / (s[..., None] + 1j * self.omega)
        body = np.einsum("...uw,uw->...u", ((prod - 1.0) * k).real, self.omega_w)
        return (np.arctan2(self.omega_hi, s) + body) / math.pi

    def first_moment(self, prod: np.ndarray | None, s: np.ndarray) -> np.ndarray:
        """E[I exp(-s I) | u]."""
        if prod is None:
            return np.zeros_like(s)
        s = np.asarray(s, float)
        k = 1.0 / (s[..., None] + 1j * self.omega) ** 2
        body = np.einsum("...uw,uw->...u", ((prod - 1.0) * k).real, self.omega_w)
        return (self.omega_hi / (s * s + self.omega_hi ** 2) + body) / math.pi

    def ccdf(self, prod: np.ndarray | None, t: np.ndarray) -> np.ndarray:
        """Pr{SINR >= t} for an array of thresholds ``t``."""
        t = np.atleast_1d(np.asarray(t, float))
        out = np.empty(t.shape)
        for sl in _chunks(t.size, self.u.size * self.omega.shape[1]):
            s = t[sl, None] * self.signal_rate[None, :]
            with np.errstate(invalid="ignore", over="ignore"):
                cond = np.exp(-s * self.noise) * self.laplace(prod, s)
            out[sl] = np.nan_to_num(cond, nan=0.0) @ self.uw
        out[t <= 0] = float(np.sum(self.uw))
        out[np.isinf(t)] = 0.0
        return out

    def pdf(self, prod: np.ndarray | None, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        a = self.signal_rate[None, :]
        out = np.empty(t.shape)
        for sl in _chunks(t.size, self.u.size * self.omega.shape[1]):
            s = t[sl, None] * a
            cond = a * np.exp(-s * self.noise) * (self.noise * self.laplace(prod, s)
                                                  + self.first_moment(prod, s))
            out[sl] = cond @ self.uw
        return out


def _chunks(n: int, per_item: int, budget: int = 4_000_000):
    """Slices over ``n`` thresholds keeping each (t, u, omega) block under ``budget`` entries."""
    step = max(1, budget // max(per_item, 1))
    for i in range(0, n, step):
        yield slice(i, min(n, i + step))


def _build_kernel(scenario: Scenario, b: int, interferers: Sequence[int], u: np.ndarray,
                  uw: np.ndarray, cfg: QuadratureConfig, cell: VoronoiCell | None = None) -> _Kernel:
    sb = scenario.base_stations[b]
    alpha = scenario.propagation.alpha
    interferers = tuple(interferers)
    rows = []
    for uk in u:
        cf = _CF(scenario, b, float(uk), interferers, cfg.angle_nodes, cell)
        if interferers:
            om, ow, hi = omega_rule(cf, cfg)
            rows.append((om, ow, hi, cf.factors(om)))
        else:
            rows.append((np.zeros(1), np.zeros(1), 1.0, np.zeros((0, 1), complex)))
    n_om = max(r[0].size for r in rows)
    n_u = u.size
    omega = np.ones((n_u, n_om))
    omega_w = np.zeros((n_u, n_om))
    omega_hi = np.empty(n_u)
    phi = np.zeros((len(interferers), n_u, n_om), dtype=complex)
    for k, (om, ow, hi, f) in enumerate(rows):
        omega[k, :om.size] = om
        omega_w[k, :om.size] = ow
        omega_hi[k] = hi
        phi[:, k, :om.size] = f
    return _Kernel(b=b, interferers=interferers, u=u, uw=uw, omega=omega, omega_w=omega_w,
                   omega_hi=omega_hi, phi=phi, signal_rate=sb.mu * (KM * u) ** alpha,
                   noise=scenario.propagation.noise_power(sb.bandwidth_hz))


@dataclass
class CoverageCoefficients:
    """Subset-expansion coefficients of the circular-model coverage.

    ``values[(b, s)]`` is indexed by a bitmask over ``interferers[b]``; entry
    ``J`` multiplies ``delta_bs * prod_{j in J} x_j``. Entry 0 is the
    interference-free term.
    """

    interferers: dict[int, tuple[int, ...]]
    values: dict[tuple[int, int], np.ndarray]
    weights: dict[int, float]
    scenario_hash: str = ""

    def coefficient(self, b: int, s: int, subset: Iterable[int]) -> float:
        idx = self.interferers[b]
        mask = 0
        for j in subset:
            mask |= 1 << idx.index(j)
        return float(self.values[(b, s)][mask])

    def terms(self, b: int, s: int):
        """Yield (tuple of interferer indices, coefficient) for every subset."""
        idx = self.interferers[b]
        vals = self.values[(b, s)]
        for mask in range(vals.size):
            yield tuple(idx[i] for i in range(len(idx)) if mask >> i & 1), float(vals[mask])

    def evaluate(self, b: int, s: int, leased: Iterable[int]) -> float:
        """Sum of coefficients over subsets of the leased interferers."""
        idx = self.interferers[b]
        leased = set(leased)
        full = 0
        for i, j in enumerate(idx):
            if j in leased:
                full |= 1 << i
        vals = self.values[(b, s)]
        sub, total = full, 0.0
        while True:
            total += vals[sub]
            if sub == 0:
                break
            sub = (sub - 1) & full
        return float(total)

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "scenario_hash": self.scenario_hash,
            "interferers": {str(b): list(v) for b, v in self.interferers.items()},
            "weights": {str(b): w for b, w in self.weights.items()},
            "values": {f"{b},{s}": v.tolist() for (b, s), v in self.values.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "CoverageCoefficients":
        if d.get("format_version") != 1:
            raise ValueError("unsupported coefficient cache version")
        vals = {}
        for k, v in d["values"].items():
            b, s = (int(t) for t in k.split(","))
            vals[(b, s)] = np.array(v, dtype=float)
        return cls(interferers={int(b): tuple(v) for b, v in d["interferers"].items()},
                   values=vals, weights={int(b): float(w) for b, w in d["weights"].items()},
                   scenario_hash=d.get("scenario_hash", ""))


def mobius(values: np.ndarray) -> np.ndarray:
    """Subset Mobius transform: out[J] = sum_{K subset J} (-1)^{|J-K|} values[K]."""
    f = np.array(values, dtype=float)
    m = int(round(math.log2(f.size)))
    for i in range(m):
        v = f.reshape(-1, 2, 1 << i)
        v[:, 1, :] -= v[:, 0, :]
    return f


def zeta(values: np.ndarray) -> np.ndarray:
    """Inverse of :func:`mobius`: out[J] = sum_{K subset J} values[K]."""
    f = np.array(values, dtype=float)
    m = int(round(math.log2(f.size)))
    for i in range(m):
        v = f.reshape(-1, 2, 1 << i)
        v[:, 1, :] += v[:, 0, :]
    return f


class CoverageEngine:
    """Coverage probabilities for one scenario geometry.

    Kernels depend only on station positions, powers and the propagation model,
    so one engine serves every demand profile on the same layout (e.g. an
    intensity sweep). Thread-safe for reads; kernels are built once.
    """

    def __init__(self, scenario: Scenario, cfg: QuadratureConfig | None = None, workers: int = 1):
        self.scenario = scenario
        self.cfg = cfg or QuadratureConfig()
        self.workers = max(1, int(workers))
        self._circ: dict[int, _Kernel] = {}
        self._vor: dict[tuple, _Kernel] = {}
        self._lock = threading.Lock()
        self._g_cache: dict[tuple, float] = {}

    def rebind(self, scenario: Scenario) -> "CoverageEngine":
        """Engine for ``scenario`` sharing this engine's kernels.

        Only the demands may differ; kernels depend on geometry, powers and
        propagation alone.
        """
        if (scenario.region != self.scenario.region
                or scenario.base_stations != self.scenario.base_stations
                or scenario.propagation != self.scenario.propagation):
            raise ValueError("rebind requires identical geometry and propagation")
        eng = CoverageEngine.__new__(CoverageEngine)
        eng.__dict__.update(self.__dict__)
        eng.scenario = scenario
        return eng

    def _checked(self, val: float) -> float:
        tol = 1e3 * self.cfg.rel_tol + self.cfg.abs_tol
        if not math.isfinite(val) or val < -tol or val > 1.0 + tol:
            raise QuadratureError(f"coverage value {val!r} outside [0, 1]")
        return min(max(val, 0.0), 1.0)

    # -- kernels -----------------------------------------------------------
    def _others(self, b: int) -> tuple[int, ...]:
        return tuple(j for j in range(self.scenario.n_bs) if j != b)

    def _dist(self, b: int, j: int) -> float:
        bs = self.scenario.base_stations
        return math.dist(bs[b].location, bs[j].location)

    def circular_kernel(self, b: int) -> _Kernel:
        k = self._circ.get(b)
        if k is None:
            q = self.scenario.base_stations[b].q
            others = self._others(b)
            dists = [self._dist(b, j) for j in others]
            u, w = u_rule(0.0, q, dists, self.cfg, graded=dists)
            k = _build_kernel(self.scenario, b, others, u, w * 2.0 * u / (q * q), self.cfg)
            with self._lock:
                self._circ.setdefault(b, k)
            k = self._circ[b]
        return k

    def voronoi_kernel(self, cell: VoronoiCell, interferers: Sequence[int]) -> _Kernel:
        key = (cell.bs_index, tuple(np.round(cell.polygon, 12).ravel()), tuple(interferers))
        k = self._vor.get(key)
        if k is None:
            b = cell.bs_index
            dists = [self._dist(b, j) for j in interferers]
            u, w = u_rule(0.0, cell.circumradius, list(cell.breakpoints()) + dists, self.cfg,
                          graded=dists)
            dens = np.array([cell_distance_pdf(cell, float(x)) for x in u])
            dens /= float(w @ dens)  # finite-difference density; renormalise to unit mass
            k = _build_kernel(self.scenario, b, interferers, u, w * dens, self.cfg, cell)
            with self._lock:
                self._vor.setdefault(key, k)
            k = self._vor[key]
        return k

    def warm(self, stations: Iterable[int] | None = None) -> None:
        todo = list(range(self.scenario.n_bs) if stations is None else stations)
        if self.workers == 1:
            for b in todo:
                self.circular_kernel(b)
        else:
            with ThreadPoolExecutor(self.workers) as ex:
                list(ex.map(self.circular_kernel, todo))

    # -- circular model ----------------------------------------------------
    def threshold(self, b: int, sp: ServiceDemand) -> float:
        return sinr_threshold(sp, self.scenario.base_stations[b])

    def area_weight(self, b: int) -> float:
        q = self.scenario.base_stations[b].q
        return math.pi * q * q / self.scenario.region.area

    def per_bs_coverage(self, b: int, sp: ServiceDemand, active: Iterable[int]) -> float:
        """Pr{rate >= kappa_s | served by b}, interferers ``active`` (b excluded)."""
        active = frozenset(int(j) for j in active) - {b}
        t = self.threshold(b, sp)
        key = ("c", b, t, active)
        val = self._g_cache.get(key)
        if val is None:
            if t <= 0.0:
                val = 1.0
            else:
                k = self.circular_kernel(b)
                val = self._checked(float(k.ccdf(k.product(active), np.array([t]))[0]))
            self._g_cache[key] = val
        return val

    def per_bs_coverage_by_rate(self, b: int, sp: ServiceDemand, active: Iterable[int]) -> float:
        """1 - int_0^kappa f_rate(rho) d rho by composite Simpson on ``rate_grid_points`` nodes.

        Cross-check for :meth:`per_bs_coverage`, which uses the closed form of
        this integral (the SINR tail at the rate threshold).
        """
        n = self.cfg.rate_grid_points | 1
        # rho = kappa v^2 absorbs the T^(-1/2) edge of the density when an
        # interferer sits inside the disc
        v = np.linspace(0.0, 1.0, n)
        rho = sp.kappa * v * v
        f = self.rate_pdf(b, sp, active, rho) * 2.0 * sp.kappa * v
        f[0] = 2.0 * f[1] - f[2]  # finite limit, extrapolated
        mass = integrate.simpson(f, x=v)
        # the grid starts at SINR 0, where the ccdf equals the u-normalisation
        return float(np.sum(self.circular_kernel(b).uw)) - mass

    def sinr_ccdf(self, b: int, active: Iterable[int], t) -> np.ndarray:
        k = self.circular_kernel(b)
        return k.ccdf(k.product(set(active) - {b}), t)

    def sinr_pdf(self, b: int, active: Iterable[int], t) -> np.ndarray:
        k = self.circular_kernel(b)
        return k.pdf(k.product(set(active) - {b}), t)

    def rate_pdf(self, b: int, sp: ServiceDemand, active: Iterable[int], rho) -> np.ndarray:
        """Density of the (unsliced) UE rate under the mean-load approximation."""
        bs = self.scenario.base_stations[b]
        load = max(mean_load(sp.lam, bs.q), 1.0)
        c = load * math.log(2.0) / bs.bandwidth_hz
        rho = np.atleast_1d(np.asarray(rho, float))
        t = np.expm1(c * rho)
        return self.sinr_pdf(b, active, t) * c * np.exp(c * rho)

    def network_coverage(self, alloc: Allocation, s: int, sp: ServiceDemand | None = None) -> float:
        sp = sp or self.scenario.demands[s]
        leased = set(alloc.leased)
        total = 0.0
        for b in range(self.scenario.n_bs):
            d = alloc.delta[b, s]
            if d == 0.0:
                continue
            total += d * self.area_weight(b) * self.per_bs_coverage(b, sp, leased - {b})
        return total

    def coverage_matrix(self, leased: Iterable[int], demands: Sequence[ServiceDemand] | None = None
                        ) -> np.ndarray:
        """(n_bs, n_sp) matrix of area-weighted per-station coverage for a lease set.

        Rows of stations outside ``leased`` are zero.
        """
        demands = demands if demands is not None else self.scenario.demands
        leased = set(leased)
        out = np.zeros((self.scenario.n_bs, len(demands)))
        for b in sorted(leased):
            w = self.area_weight(b)
            for s, sp in enumerate(demands):
                out[b, s] = w * self.per_bs_coverage(b, sp, leased - {b})
        return out

    def subset_coverages(self, b: int, sp: ServiceDemand) -> np.ndarray:
        """Per-station coverage for every interferer subset, indexed by bitmask."""
        k = self.circular_kernel(b)
        m = len(k.interferers)
        t = self.threshold(b, sp)
        out = np.empty(1 << m)
        if t <= 0.0 or math.isinf(t):
            out[:] = 1.0 if t <= 0.0 else 0.0
            return out
        s = t * k.signal_rate
        noise = np.exp(-s * k.noise) * k.uw
        kern = 1.0 / (s[:, None] + 1j * k.omega)
        base = np.arctan2(k.omega_hi, s)
        wk = kern * k.omega_w

        def value(prod):
            body = ((prod - 1.0) * wk).real.sum(axis=1)
            return float(noise @ ((base + body) / math.pi))

        out[0] = float(noise.sum())
        stack = [(0, 0, None)]
        while stack:
            start, mask, prod = stack.pop()
            for i in range(start, m):
                p = k.phi[i] if prod is None else prod * k.phi[i]
                nm = mask | (1 << i)
                out[nm] = value(p)
                stack.append((i + 1, nm, p))
        for mask in range(1 << m):
            active = frozenset(k.interferers[i] for i in range(m) if mask >> i & 1)
            self._g_cache.setdefault(("c", b, t, active), float(out[mask]))
        return out

    def precompute_coefficients(self, demands: Sequence[ServiceDemand] | None = None
                                ) -> CoverageCoefficients:
        demands = demands if demands is not None else self.scenario.demands
        if self.scenario.n_bs - 1 > self.cfg.max_expansion_size:
            raise ExpansionTooLarge(
                f"{self.scenario.n_bs - 1} interferers per station exceeds "
                f"max_expansion_size={self.cfg.max_expansion_size}")
        self.warm()
        values, weights, inter = {}, {}, {}
        for b in range(self.scenario.n_bs):
            inter[b] = self._others(b)
            weights[b] = self.area_weight(b)
            for s, sp in enumerate(demands):
                values[(b, s)] = weights[b] * mobius(self.subset_coverages(b, sp))
        return CoverageCoefficients(inter, values, weights, self.scenario.content_hash())

    # -- Voronoi model -----------------------------------------------------
    def voronoi_per_bs(self, cell: VoronoiCell, sp: ServiceDemand, interferers: Sequence[int]
                       ) -> float:
        """Rate coverage of a UE uniform in ``cell`` with a Poisson cell load."""
        bs = self.scenario.base_stations[cell.bs_index]
        mean_others = sp.lam * cell.area
        eps = self.cfg.poisson_tail_eps
        lo = int(stats.poisson.ppf(eps / 2, mean_others))
        hi = int(stats.poisson.ppf(1 - eps / 2, mean_others))
        extra = np.arange(lo, hi + 1)
        pmf = stats.poisson.pmf(extra, mean_others)
        n = extra + 1
        t = np.expm1(n * sp.kappa / bs.bandwidth_hz * math.log(2.0))
        k = self.voronoi_kernel(cell, tuple(interferers))
        cov = k.ccdf(k.product(interferers), t)
        return float(pmf @ cov)

    def voronoi_rate_coverage(self, alloc: Allocation, s: int, cells: Sequence[VoronoiCell],
                              sp: ServiceDemand | None = None) -> float:
        """Coverage with true Voronoi cells; every tessellated station interferes."""
        sp = sp or self.scenario.demands[s]
        stations = [c.bs_index for c in cells]
        if any(alloc.x[b] != 1 for b in stations):
            raise ValueError("the Voronoi formula needs every tessellated station leased")
        total = 0.0
        area = self.scenario.region.area
        for cell in cells:
            d = alloc.delta[cell.bs_index, s]
            if d == 0.0:
                continue
            others = tuple(j for j in stations if j != cell.bs_index)
            total += d * cell.area / area * self.voronoi_per_bs(cell, sp, others)
        return total

    def voronoi_terms(self, cells: Sequence[VoronoiCell], sp: ServiceDemand) -> np.ndarray:
        """Coefficient of delta_bs in the Voronoi coverage, per station."""
        stations = [c.bs_index for c in cells]
        out = np.zeros(self.scenario.n_bs)
        for cell in cells:
            others = tuple(j for j in stations if j != cell.bs_index)
            out[cell.bs_index] = cell.area / self.scenario.region.area * \
                self.voronoi_per_bs(cell, sp, others)
        return out


# -- standalone densities ----------------------------------------------------

def interference_pdf(c: float, u: float, serving: BaseStation, active: Sequence[BaseStation],
                     alpha: float, cfg: QuadratureConfig | None = None):
    """Density of the aggregate interference at ``c`` (W) for a UE at distance ``u``.

    Inverts the characteristic-function product with a Fourier-weighted
    quadrature on the half line. Returns :data:`POINT_MASS_AT_ZERO` when no
    station interferes.
    """
    cfg = cfg or QuadratureConfig()
    if not active:
        return POINT_MASS_AT_ZERO
    if c < 0:
        return 0.0
    parts = []
    for j in active:
        d = math.dist(j.location, serving.location)
        v, w = angle_rule(u, d, cfg.angle_nodes)
        parts.append((_rates(j, u, d, v, alpha), w))
    scale = max(float(w @ a) for a, w in parts)

    def phi(x):
        x = x * scale
        out = 1.0 + 0j
        for a, w in parts:
            out *= complex(w @ (a / (a - 1j * x)))
        return out

    # omega is measured in units of ``scale``; c in units of 1/scale
    cc = c * scale
    with warnings.catch_warnings():
        # QAWF flags slow cycles near the origin; values are checked against
        # exact hypoexponential mixtures in the tests
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        re, im = _fourier_parts(phi, cc, cfg)
    val = (re + im) / math.pi * scale
    if not math.isfinite(val):
        raise QuadratureError("interference density did not converge")
    return val


def _fourier_parts(phi, cc: float, cfg: QuadratureConfig) -> tuple[float, float]:
    if cc == 0.0:
        re = integrate.quad(lambda x: phi(x).real, 0, np.inf, limit=400,
                            epsabs=cfg.abs_tol, epsrel=cfg.rel_tol)[0]
        return re, 0.0
    re = integrate.quad(lambda x: phi(x).real, 0, np.inf, weight="cos", wvar=cc,
                        limlst=200, limit=400, epsabs=cfg.abs_tol)[0]
    im = integrate.quad(lambda x: phi(x).imag, 0, np.inf, weight="sin", wvar=cc,
                        limlst=200, limit=400, epsabs=cfg.abs_tol)[0]
    return re, im


# -- coefficient cache ------------------------------------------------------------

def _cfg_tag(cfg: QuadratureConfig) -> str:
    import hashlib
    import json
    from dataclasses import asdict
    blob = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def coefficient_cache_path(cache_dir, scenario: Scenario, cfg: QuadratureConfig):
    from pathlib import Path
    return Path(cache_dir) / f"coef-{scenario.content_hash()[:24]}-{_cfg_tag(cfg)}.json"


def cached_coefficients(engine: CoverageEngine, cache_dir=None) -> CoverageCoefficients:
    """Coefficients for ``engine.scenario``, read from / written to a JSON sidecar.

    The file name carries the scenario content hash and a hash of the
    quadrature config, and the stored hash is checked on load.
    """
    import json
    if cache_dir is None:
        return engine.precompute_coefficients()
    path = coefficient_cache_path(cache_dir, engine.scenario, engine.cfg)
    if path.exists():
        coeffs = CoverageCoefficients.from_json(json.loads(path.read_text()))
        if coeffs.scenario_hash == engine.scenario.content_hash():
            return coeffs
    coeffs = engine.precompute_coefficients()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(coeffs.to_json(), sort_keys=True))
    tmp.replace(path)
    return coeffs


# -- functional interface -----------------------------------------------------------

def per_bs_coverage(scenario: Scenario, b: int, s: int, active: Iterable[int],
                    cfg: QuadratureConfig | None = None) -> float:
    return CoverageEngine(scenario, cfg).per_bs_coverage(b, scenario.demands[s], active)


def network_coverage(scenario: Scenario, alloc: Allocation, s: int,
                     cfg: QuadratureConfig | None = None) -> float:
    return CoverageEngine(scenario, cfg).network_coverage(alloc, s)


def voronoi_rate_coverage(scenario: Scenario, alloc: Allocation, s: int,
                          cells: Sequence[VoronoiCell], cfg: QuadratureConfig | None = None) -> float:
    return CoverageEngine(scenario, cfg).voronoi_rate_coverage(alloc, s, cells)


def precompute_coefficients(scenario: Scenario, cfg: QuadratureConfig | None = None
                            ) -> CoverageCoefficients:
    return CoverageEngine(scenario, cfg).precompute_coefficients()


def sinr_pdf(scenario: Scenario, t, serving: int, active: Iterable[int],
             cfg: QuadratureConfig | None = None) -> np.ndarray:
    """SINR density for a UE uniform in the disc of ``serving``.

    With no active interferers the interference is a point mass and the
    closed-form exponential-gain density is returned.
    """
    active = sorted(set(active) - {serving})
    eng = CoverageEngine(scenario, cfg)
    if not active:
        return no_interference_sinr_pdf(scenario, serving, t)
    return eng.sinr_pdf(serving, active, t)


def no_interference_sinr_pdf(scenario: Scenario, serving: int, t) -> np.ndarray:
    """Closed form of the interference-free SINR density with a uniform disc UE.

    With ``k = mu sigma^2 (1000 q)^alpha`` and ``x = 2/alpha``,
    ``f(T) = x (kT)^-x / T * gamma_lower(x + 1, kT)``, tending to ``x k / (x + 1)`` at 0.
    """
    from scipy.special import gamma, gammainc
    bs = scenario.base_stations[serving]
    alpha = scenario.propagation.alpha
    noise = scenario.propagation.noise_power(bs.bandwidth_hz)
    k = bs.mu * noise * (KM * bs.q) ** alpha
    x = 2.0 / alpha
    t = np.atleast_1d(np.asarray(t, float))
    out = np.full(t.shape, x * k / (x + 1.0))
    big = k * t >= 1e-8
    tt = t[big]
    out[big] = x * (k * tt) ** (-x) / tt * gamma(x + 1.0) * gammainc(x + 1.0, k * tt)
    out[t < 0] = 0.0
    return out
