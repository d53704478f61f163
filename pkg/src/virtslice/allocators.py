"""Non-exact allocation paths: greedy leasing, ranked sequential slicing, equal split."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coverage import CoverageEngine, QuadratureConfig
from .geometry import VoronoiCell, voronoi_tessellation
from .milp import CONTINUOUS, GE, LE, MILPModel
from .scenario import Allocation, Scenario, ServiceDemand
from .solver import OPTIMAL, coverage_coef, delta_lp, solve_lp

SATISFIED, PARTIAL, UNSERVED = "satisfied", "partially-served", "unserved"
SAT_TOL = 1e-9


class Infeasible:
    """Marker returned when no allocation meets every coverage target."""

    def __init__(self, reason: str = ""):
        self.reason = reason

    def __bool__(self):
        return False

    def __repr__(self):
        return f"Infeasible({self.reason!r})"


# -- greedy ----------------------------------------------------------------------

def max_capped_coverage(coef: np.ndarray, beta: Sequence[float]) -> tuple[float, np.ndarray]:
    """max sum_s min(coverage_s, beta_s) over feasible slices; returns (value, delta)."""
    nb, ns = coef.shape
    m = MILPModel()
    d = {(b, s): m.add_var(f"d{b}_{s}") for b in range(nb) for s in range(ns)}
    t = [m.add_var(f"t{s}", CONTINUOUS, 0.0, float(beta[s])) for s in range(ns)]
    for s in range(ns):
        m.objective[t[s]] = -1.0
        row = {d[(b, s)]: -coef[b, s] for b in range(nb) if coef[b, s] != 0.0}
        row[t[s]] = 1.0
        m.add_constraint(row, LE, 0.0)
    for b in range(nb):
        if coef[b].any():
            m.add_constraint({d[(b, s)]: 1.0 for s in range(ns)}, LE, 1.0)
        else:
            for s in range(ns):
                m.variables[d[(b, s)]].ub = 0.0
    sol = solve_lp(m)
    return -sol.objective, sol.x[:nb * ns].reshape(nb, ns)


@dataclass
class GreedyResult:
    allocation: Allocation | None
    order: list[int] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.allocation is not None


def greedy_allocate(scenario: Scenario, cfg: QuadratureConfig | None = None,
                    engine: CoverageEngine | None = None) -> GreedyResult:
    """Add stations one at a time by coverage gain per unit cost.

    The gain is measured on sum_s min(coverage_s, beta_s) with slices
    re-optimised for each candidate set, so only unmet demand counts. Ties go
    to the lower station index.
    """
    engine = engine or CoverageEngine(scenario, cfg)
    beta = [sp.beta for sp in scenario.demands]
    target = math.fsum(beta)
    leased: list[int] = []
    score = 0.0
    order, scores = [], []
    while len(leased) < scenario.n_bs:
        best = None
        for b in range(scenario.n_bs):
            if b in leased:
                continue
            cand = sorted(leased + [b])
            val, _ = max_capped_coverage(coverage_coef(engine, cand), beta)
            gain = val - score
            cost = scenario.base_stations[b].lease_cost
            ratio = gain / cost if cost > 0 else (math.inf if gain > 0 else gain)
            if best is None or ratio > best[0] + 1e-15:
                best = (ratio, b, val)
        _, b, score = best
        leased = sorted(leased + [b])
        order.append(b)
        scores.append(score)
        if score >= target - SAT_TOL:
            break
    coef = coverage_coef(engine, leased)
    sol = delta_lp(coef, beta)
    if sol.status != OPTIMAL:
        return GreedyResult(None, order, scores)
    x = np.zeros(scenario.n_bs, int)
    x[leased] = 1
    delta = sol.x[:scenario.n_bs * scenario.n_sp].reshape(scenario.n_bs, scenario.n_sp)
    return GreedyResult(Allocation(x, delta).cleaned(), order, scores)


# -- sequential (ranked) ---------------------------------------------------------

@dataclass
class ResidualCapacity:
    avail: np.ndarray

    def __post_init__(self):
        self.avail = np.asarray(self.avail, float)
        if np.any(self.avail < -1e-12) or np.any(self.avail > 1 + 1e-12):
            raise ValueError("available fractions must lie in [0, 1]")

    @classmethod
    def full(cls, n_bs: int) -> "ResidualCapacity":
        return cls(np.ones(n_bs))


@dataclass
class SequentialOutcome:
    status: dict[str, str]
    allocation: Allocation
    satisfied: list[str]
    coverage: dict[str, float]
    avail_history: list[np.ndarray] = field(default_factory=list)


def solve_problem2(terms: np.ndarray, beta: float, residual: ResidualCapacity) -> np.ndarray | None:
    """Smallest total slice meeting ``sum_b terms_b * delta_b >= beta`` with
    ``0 <= delta_b <= avail_b``. ``terms`` are per-station coverage
    coefficients (area weight times in-cell coverage). Returns None when
    infeasible.
    """
    terms = np.asarray(terms, float)
    if beta <= 0:
        return np.zeros(terms.size)
    m = MILPModel()
    for b in range(terms.size):
        i = m.add_var(f"d{b}", CONTINUOUS, 0.0, float(residual.avail[b]))
        m.objective[i] = 1.0
    m.add_constraint({b: terms[b] for b in range(terms.size) if terms[b] != 0.0}, GE, float(beta))
    sol = solve_lp(m)
    if sol.status != OPTIMAL:
        return None
    return sol.x


def knapsack_problem2(terms: np.ndarray, beta: float, residual: ResidualCapacity) -> np.ndarray | None:
    """Greedy fractional-knapsack solution of the same LP (highest coverage per slice first)."""
    terms = np.asarray(terms, float)
    out = np.zeros(terms.size)
    need = beta
    for b in sorted(range(terms.size), key=lambda b: (-terms[b], b)):
        if need <= 0 or terms[b] <= 0:
            break
        take = min(residual.avail[b], need / terms[b])
        out[b] = take
        need -= take * terms[b]
    return out if need <= 1e-12 else None


def voronoi_terms(engine: CoverageEngine, sp: ServiceDemand, cells: Sequence[VoronoiCell]) -> np.ndarray:
    return engine.voronoi_terms(cells, sp)


def sequential_allocate(scenario: Scenario, cfg: QuadratureConfig | None = None,
                        engine: CoverageEngine | None = None,
                        cells: Sequence[VoronoiCell] | None = None) -> SequentialOutcome:
    """Serve SPs in rank order from the residual capacity of all stations.

    Coverage follows the Voronoi formula with every station interfering. The
    first SP that cannot be met receives all remaining capacity and the loop
    stops; later SPs are unserved.
    """
    engine = engine or CoverageEngine(scenario, cfg)
    cells = cells if cells is not None else voronoi_tessellation(scenario.locations, scenario.region)
    nb, ns = scenario.n_bs, scenario.n_sp
    residual = ResidualCapacity.full(nb)
    delta = np.zeros((nb, ns))
    status = {sp.sp_id: UNSERVED for sp in scenario.demands}
    coverage = {sp.sp_id: 0.0 for sp in scenario.demands}
    satisfied = []
    history = [residual.avail.copy()]
    order = sorted(range(ns), key=lambda s: scenario.demands[s].priority_rank)
    for s in order:
        if residual.avail.max(initial=0.0) <= SAT_TOL:
            break
        sp = scenario.demands[s]
        terms = voronoi_terms(engine, sp, cells)
        sl = solve_problem2(terms, sp.beta, residual)
        if sl is None:
            delta[:, s] = residual.avail
            coverage[sp.sp_id] = float(terms @ delta[:, s])
            status[sp.sp_id] = PARTIAL
            residual = ResidualCapacity(np.zeros(nb))
            history.append(residual.avail.copy())
            break
        sl = np.minimum(sl, residual.avail)
        delta[:, s] = sl
        coverage[sp.sp_id] = float(terms @ sl)
        status[sp.sp_id] = SATISFIED
        satisfied.append(sp.sp_id)
        residual = ResidualCapacity(np.clip(residual.avail - sl, 0.0, 1.0))
        history.append(residual.avail.copy())
    alloc = Allocation(np.ones(nb, int), delta).cleaned()
    return SequentialOutcome(status, alloc, satisfied, coverage, history)


def equal_split(scenario: Scenario) -> Allocation:
    ns = scenario.n_sp
    return Allocation(np.ones(scenario.n_bs, int), np.full((scenario.n_bs, ns), 1.0 / ns))
