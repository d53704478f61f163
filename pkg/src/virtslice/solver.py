"""LP solving, branch-and-bound, and a brute-force optimality oracle."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .coverage import CoverageEngine, ExpansionTooLarge, QuadratureConfig
from .milp import (CONTINUOUS, EQ, GE, INTEGRALITY_TOL, LE, LinearizationMap, MILPModel,
                   build_problem1, extract_allocation)
from .scenario import Allocation, Scenario

OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-11
COST_TOL = 1e-9
DENSE_LIMIT = 400_000        # max rows * columns handled by the built-in simplex
MILP_AUX_LIMIT = 4_000       # above this many auxiliaries the exact path branches on x directly
ENUMERATE_MAX_BS = 20


class NumericalFailure(RuntimeError):
    pass


class BudgetExceeded(RuntimeError):
    def __init__(self, message, nodes=0, incumbent=None):
        super().__init__(message)
        self.nodes = nodes
        self.incumbent = incumbent


@dataclass
class LPSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = math.nan
    iterations: int = 0
    backend: str = "simplex"


# -- simplex -------------------------------------------------------------------

class _Simplex:
    """Dense tableau, bounded-variable primal simplex.

    Solves min c.y s.t. A y = b, 0 <= y <= u with b >= 0. Nonbasic variables
    sit at either bound. Dantzig pricing, switching permanently to Bland's rule
    after a run of degenerate pivots.
    """

    def __init__(self, A, b, c, u, basis, max_iter):
        m, n = A.shape
        self.m, self.n = m, n
        self.T = np.zeros((m + 1, n))
        self.T[:m] = A
        self.rhs = np.asarray(b, float).copy()
        self.u = np.asarray(u, float)
        self.basis = np.asarray(basis, int)
        self.at_upper = np.zeros(n, bool)
        self.max_iter = max_iter
        self.iterations = 0
        self.bland = False
        self._degenerate_run = 0
        # make basis columns unit vectors
        for r, j in enumerate(self.basis):
            if abs(self.T[r, j] - 1.0) > 0 or np.count_nonzero(self.T[:m, j]) != 1:
                self._pivot(r, j)
        self.set_cost(c)

    def set_cost(self, c):
        c = np.asarray(c, float)
        self.c = c
        self.T[self.m] = c - c[self.basis] @ self.T[:self.m]

    def _pivot(self, r, j):
        T = self.T
        piv = T[r, j]
        T[r] /= piv
        self.rhs[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.rhs -= col[:self.m] * self.rhs[r]
        self.basis[r] = j

    def xb(self):
        # rhs holds B^-1 b; subtract contributions of nonbasics at their upper bound
        up = np.flatnonzero(self.at_upper)
        if up.size:
            return self.rhs - self.T[:self.m, up] @ self.u[up]
        return self.rhs.copy()

    def values(self):
        y = np.where(self.at_upper, self.u, 0.0)
        y[self.basis] = self.xb()
        return y

    def run(self, allowed=None):
        m = self.m
        basic = np.zeros(self.n, bool)
        while True:
            if self.iterations >= self.max_iter:
                raise NumericalFailure("simplex pivot budget exhausted")
            d = self.T[m]
            basic[:] = False
            basic[self.basis] = True
            movable = ~basic & (self.u > 0)
            if allowed is not None:
                movable &= allowed
            score = np.where(self.at_upper, d, -d)
            cand = movable & (score > 1e-9)
            if not cand.any():
                return OPTIMAL
            if self.bland:
                j = int(np.flatnonzero(cand)[0])
            else:
                j = int(np.argmax(np.where(cand, score, -np.inf)))
            sigma = -1.0 if self.at_upper[j] else 1.0
            a = sigma * self.T[:m, j]
            xb = self.xb()
            ub = self.u[self.basis]
            t_best, r_best, to_upper = self.u[j], -1, False
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = a > PIVOT_TOL
                inc = (a < -PIVOT_TOL) & np.isfinite(ub)
                lim = np.full(m, np.inf)
                lim[dec] = np.maximum(xb[dec], 0.0) / a[dec]
                lim[inc] = np.maximum(ub[inc] - xb[inc], 0.0) / (-a[inc])
            if m:
                t_row = lim.min()
                if t_row < t_best - 1e-12 or (t_row <= t_best and np.isfinite(t_row)):
                    ties = np.flatnonzero(lim <= t_row + 1e-12)
                    if self.bland:
                        r_best = int(ties[np.argmin(self.basis[ties])])
                    else:
                        r_best = int(ties[np.argmax(np.abs(a[ties]))])
                    t_best = lim[r_best]
                    to_upper = bool(inc[r_best])
            if not np.isfinite(t_best):
                return UNBOUNDED
            self.iterations += 1
            if t_best <= 1e-12:
                self._degenerate_run += 1
                if self._degenerate_run > 50:
                    self.bland = True
            else:
                self._degenerate_run = 0
            if r_best < 0:
                self.at_upper[j] = not self.at_upper[j]
                continue
            leaving = self.basis[r_best]
            self._pivot(r_best, j)
            self.at_upper[j] = False
            # entering value is kept implicitly: rhs is B^-1 b with nonbasics folded in via xb()
            self.at_upper[leaving] = to_upper

    def polish(self, A, b):
        """Recompute basic values from the original system to shed drift."""
        y = np.where(self.at_upper, self.u, 0.0)
        y[self.basis] = 0.0
        B = A[:, self.basis]
        try:
            y[self.basis] = np.linalg.solve(B, b - A @ y)
        except np.linalg.LinAlgError:
            y[self.basis] = self.xb()
        return y


def _standard_form(c, A, senses, rhs, lb, ub):
    m, n = A.shape
    if np.any(~np.isfinite(lb)):
        raise ValueError("variables need finite lower bounds")
    shift = rhs - A @ lb
    slack_cols = np.zeros((m, 0))
    slack_of_row = np.full(m, -1)
    extra = []
    for r, s in enumerate(senses):
        if s == EQ:
            continue
        col = np.zeros(m)
        col[r] = 1.0 if s == LE else -1.0
        slack_of_row[r] = n + len(extra)
        extra.append(col)
    if extra:
        slack_cols = np.array(extra).T
    As = np.hstack([A, slack_cols])
    u = np.concatenate([ub - lb, np.full(len(extra), np.inf)])
    cs = np.concatenate([c, np.zeros(len(extra))])
    sign = np.where(shift < 0, -1.0, 1.0)
    As = As * sign[:, None]
    bs = shift * sign
    return As, bs, cs, u, slack_of_row


def _simplex_solve(c, A, senses, rhs, lb, ub) -> LPSolution:
    m, n = A.shape
    As, bs, cs, u, slack_of_row = _standard_form(c, A, senses, rhs, lb, ub)
    N = As.shape[1]
    if np.any(u < -FEAS_TOL):
        return LPSolution(INFEASIBLE)
    u = np.maximum(u, 0.0)
    basis = []
    art_rows = []
    for r in range(m):
        j = slack_of_row[r]
        if j >= 0 and As[r, j] > 0:
            basis.append(j)
        else:
            art_rows.append(r)
            basis.append(-1)
    n_art = len(art_rows)
    Af = np.hstack([As, np.zeros((m, n_art))])
    for k, r in enumerate(art_rows):
        Af[r, N + k] = 1.0
        basis[r] = N + k
    uf = np.concatenate([u, np.full(n_art, np.inf)])
    max_iter = 50 * (m + N + n_art) + 1000
    cost1 = np.concatenate([np.zeros(N), np.ones(n_art)])
    sx = _Simplex(Af, bs, cost1, uf, basis, max_iter)
    if n_art:
        sx.run()
        y = sx.values()
        if y[N:].sum() > 1e-7 * max(1.0, np.abs(bs).max(initial=0.0)):
            return LPSolution(INFEASIBLE, iterations=sx.iterations)
        # drive zero-valued artificials out of the basis
        for r in range(m):
            if sx.basis[r] >= N:
                row = sx.T[r, :N]
                cand = np.flatnonzero((np.abs(row) > 1e-9) & (uf[:N] > 0))
                if cand.size:
                    sx._pivot(r, int(cand[np.argmax(np.abs(row[cand]))]))
        uf[N:] = 0.0
    sx.u = uf
    sx.set_cost(np.concatenate([cs, np.zeros(n_art)]))
    allowed = np.concatenate([np.ones(N, bool), np.zeros(n_art, bool)])
    status = sx.run(allowed)
    if status == UNBOUNDED:
        return LPSolution(UNBOUNDED, iterations=sx.iterations)
    if np.all(sx.basis < N):
        y = sx.polish(Af[:, :N + n_art], bs)
    else:
        y = sx.values()
    x = lb + y[:n]
    x = np.clip(x, lb, ub)
    return LPSolution(OPTIMAL, x, float(c @ x), sx.iterations)


def _highs_solve(c, A, senses, rhs, lb, ub) -> LPSolution:
    le = [i for i, s in enumerate(senses) if s == LE]
    ge = [i for i, s in enumerate(senses) if s == GE]
    eq = [i for i, s in enumerate(senses) if s == EQ]
    A_ub = np.vstack([A[le], -A[ge]]) if (le or ge) else None
    b_ub = np.concatenate([rhs[le], -rhs[ge]]) if (le or ge) else None
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A[eq] if eq else None, b_eq=rhs[eq] if eq else None,
                  bounds=list(zip(lb, np.where(np.isfinite(ub), ub, None))), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status == 2:
        return LPSolution(INFEASIBLE, backend="highs")
    if res.status == 3:
        return LPSolution(UNBOUNDED, backend="highs")
    if res.status != 0:
        raise NumericalFailure(f"HiGHS: {res.message}")
    x = np.clip(res.x, lb, ub)
    return LPSolution(OPTIMAL, x, float(c @ x), int(res.nit), backend="highs")


def solve_lp(model: MILPModel, lb=None, ub=None, backend: str = "auto", dense=None) -> LPSolution:
    """Solve the LP relaxation of ``model`` (optionally with overridden bounds)."""
    c, A, senses, rhs = dense if dense is not None else model.dense()
    mlb, mub = model.bounds()
    lb = mlb if lb is None else np.asarray(lb, float)
    ub = mub if ub is None else np.asarray(ub, float)
    if np.any(lb > ub + FEAS_TOL):
        return LPSolution(INFEASIBLE)
    if backend == "auto":
        backend = "simplex" if A.shape[0] * (A.shape[1] + A.shape[0]) <= DENSE_LIMIT else "highs"
    if backend == "simplex":
        return _simplex_solve(c, A, senses, rhs, lb, ub)
    if backend == "highs":
        return _highs_solve(c, A, senses, rhs, lb, ub)
    raise ValueError(f"unknown backend {backend!r}")


# -- branch and bound on the MILP ------------------------------------------------

@dataclass
class BnBResult:
    status: str
    allocation: Allocation | None = None
    cost: float = math.inf
    nodes: int = 0
    gap: float = 0.0
    relaxation_bounds: list[float] = field(default_factory=list)
    method: str = "milp"


@dataclass
class _Node:
    bound: float
    depth: int
    lo: dict
    hi: dict


def _cost(scenario: Scenario, leased: Sequence[int]) -> float:
    return math.fsum(scenario.base_stations[b].lease_cost for b in leased)


def branch_and_bound(model: MILPModel, node_limit: int = 100_000, time_limit: float = math.inf,
                     restart_every: int = 10_000, log: Callable[[str], None] | None = None,
                     backend: str = "auto") -> tuple[str, np.ndarray | None, float, int, list[float]]:
    """Generic 0/1 branch-and-bound on ``model``.

    Returns (status, values, objective, nodes, relaxation bounds).
    """
    dense = model.dense()
    lb0, ub0 = model.bounds()
    bins = model.binaries()
    obj = dense[0]
    stack = [_Node(-math.inf, 0, {}, {})]
    best, best_val = None, math.inf
    nodes = 0
    bounds = []
    t0 = time.monotonic()
    while stack:
        if nodes and nodes % restart_every == 0:
            stack.sort(key=lambda nd: -nd.bound)
        node = stack.pop()
        if node.bound >= best_val - COST_TOL:
            continue
        if nodes >= node_limit or time.monotonic() - t0 > time_limit:
            raise BudgetExceeded("branch-and-bound budget exceeded", nodes, best)
        lb, ub = lb0.copy(), ub0.copy()
        for i, v in node.lo.items():
            lb[i] = v
        for i, v in node.hi.items():
            ub[i] = v
        sol = solve_lp(model, lb, ub, backend=backend, dense=dense)
        nodes += 1
        if sol.status == UNBOUNDED:
            raise NumericalFailure("relaxation unbounded")
        if sol.status == INFEASIBLE:
            if log:
                log(f"node={nodes} depth={node.depth} bound=inf incumbent={best_val:.6f}")
            continue
        bounds.append(sol.objective)
        if log:
            log(f"node={nodes} depth={node.depth} bound={sol.objective:.6f} incumbent={best_val:.6f}")
        if sol.objective >= best_val - COST_TOL:
            continue
        xv = sol.x[bins]
        frac = np.minimum(xv - np.floor(xv), np.ceil(xv) - xv)
        open_ = np.flatnonzero(frac > INTEGRALITY_TOL)
        if open_.size == 0:
            x = sol.x.copy()
            x[bins] = np.round(xv)
            best, best_val = x, math.fsum(obj[i] * x[i] for i in range(len(x)) if obj[i])
            continue
        key = [(-frac[k], -obj[bins[k]], bins[k]) for k in open_]
        var = min(key)[2]
        down = _Node(sol.objective, node.depth + 1, node.lo, {**node.hi, var: 0.0})
        up = _Node(sol.objective, node.depth + 1, {**node.lo, var: 1.0}, node.hi)
        stack.append(down)
        stack.append(up)
    status = OPTIMAL if best is not None else INFEASIBLE
    return status, best, best_val, nodes, bounds


# -- delta LPs -------------------------------------------------------------------

def delta_lp(coef: np.ndarray, beta: Sequence[float], avail: np.ndarray | None = None,
             y_costs: dict[int, float] | None = None, objective: str = "slices") -> LPSolution:
    """LP over slices for fixed coverage coefficients.

    ``coef`` has shape (n_bs, n_sp); rows of zeros are stations that are not
    available. With ``y_costs`` each listed station gets a relaxed lease
    variable ``y_b`` with ``delta_bs <= y_b`` and the objective is the lease
    cost; otherwise the objective is the total slice (smallest footprint).
    Variables are ``delta`` (row-major) followed by the ``y`` in key order.
    """
    coef = np.asarray(coef, float)
    nb, ns = coef.shape
    avail = np.ones(nb) if avail is None else np.asarray(avail, float)
    m = MILPModel()
    d = {}
    for b in range(nb):
        for s in range(ns):
            d[(b, s)] = m.add_var(f"d{b}_{s}", CONTINUOUS, 0.0, float(max(avail[b], 0.0)))
    y = {}
    for b in sorted(y_costs or {}):
        y[b] = m.add_var(f"y{b}", CONTINUOUS, 0.0, 1.0)
        m.objective[y[b]] = y_costs[b]
        for s in range(ns):
            m.add_constraint({d[(b, s)]: 1.0, y[b]: -1.0}, LE, 0.0)
    if not y_costs:
        for i in d.values():
            m.objective[i] = 1.0
    for b in range(nb):
        m.add_constraint({d[(b, s)]: 1.0 for s in range(ns)}, LE, float(min(avail[b], 1.0)))
    for s in range(ns):
        row = {d[(b, s)]: coef[b, s] for b in range(nb) if coef[b, s] != 0.0}
        m.add_constraint(row, GE, float(beta[s]))
    return solve_lp(m)


def _delta_matrix(sol: LPSolution, nb: int, ns: int) -> np.ndarray:
    return sol.x[:nb * ns].reshape(nb, ns)


def coverage_coef(engine: CoverageEngine, leased: Sequence[int], demands=None,
                  interferers: Sequence[int] | None = None) -> np.ndarray:
    """Area-weighted coverage per (station, SP) for stations in ``leased``.

    Interference comes from ``interferers`` (default: the leased set itself).
    """
    demands = demands if demands is not None else engine.scenario.demands
    inter = set(leased if interferers is None else interferers)
    out = np.zeros((engine.scenario.n_bs, len(demands)))
    for b in sorted(set(leased)):
        w = engine.area_weight(b)
        for s, sp in enumerate(demands):
            out[b, s] = w * engine.per_bs_coverage(b, sp, inter - {b})
    return out


def _allocation_for(engine: CoverageEngine, leased: Sequence[int]) -> Allocation | None:
    sc = engine.scenario
    coef = coverage_coef(engine, leased)
    sol = delta_lp(coef, [sp.beta for sp in sc.demands])
    if sol.status != OPTIMAL:
        return None
    delta = _delta_matrix(sol, sc.n_bs, sc.n_sp)
    x = np.zeros(sc.n_bs, int)
    x[list(leased)] = 1
    return Allocation(x, delta).cleaned()


# -- exact solvers ----------------------------------------------------------------

def enumerate_oracle(scenario: Scenario, cfg: QuadratureConfig | None = None,
                     engine: CoverageEngine | None = None) -> BnBResult:
    """Cheapest feasible lease set by exhaustive search over all subsets."""
    if scenario.n_bs > ENUMERATE_MAX_BS:
        raise ValueError(f"enumeration limited to {ENUMERATE_MAX_BS} stations")
    engine = engine or CoverageEngine(scenario, cfg)
    subsets = []
    for k in range(1, scenario.n_bs + 1):
        for sub in itertools.combinations(range(scenario.n_bs), k):
            subsets.append((_cost(scenario, sub), sub))
    subsets.sort()
    for n, (cost, sub) in enumerate(subsets, 1):
        alloc = _allocation_for(engine, sub)
        if alloc is not None:
            return BnBResult(OPTIMAL, alloc, alloc.cost(scenario), nodes=n, method="enumerate")
    return BnBResult(INFEASIBLE, nodes=len(subsets), method="enumerate")


def milp_size(scenario: Scenario) -> int:
    """Number of auxiliary variables the full subset expansion would create."""
    nb, ns = scenario.n_bs, scenario.n_sp
    z = nb * ns * ((1 << (nb - 1)) - 1)
    products = max((1 << nb) - 2 - nb, 0)  # subsets of size 2..nb-1
    return z + products


def solve_milp(scenario: Scenario, engine: CoverageEngine, node_limit: int = 100_000,
               time_limit: float = math.inf, log=None, backend: str = "auto"
               ) -> tuple[BnBResult, MILPModel, LinearizationMap]:
    coeffs = engine.precompute_coefficients()
    model, lin = build_problem1(scenario, coeffs)
    status, values, _, nodes, bounds = branch_and_bound(model, node_limit, time_limit, log=log,
                                                        backend=backend)
    if status != OPTIMAL:
        return BnBResult(INFEASIBLE, nodes=nodes, relaxation_bounds=bounds), model, lin
    alloc = extract_allocation(values, lin, scenario.n_bs, scenario.n_sp)
    return (BnBResult(OPTIMAL, alloc, alloc.cost(scenario), nodes, 0.0, bounds, "milp"),
            model, lin)


def solve_direct(scenario: Scenario, engine: CoverageEngine, node_limit: int = 100_000,
                 time_limit: float = math.inf, log=None) -> BnBResult:
    """Branch on lease decisions with an interference-optimistic relaxation.

    At a node with forced-in set F and undecided set U, every station in
    F + U may serve, but only F interferes. Coverage can only fall when more
    stations interfere, so this LP (with relaxed lease variables for U) bounds
    the cost of every completion from below.
    """
    sc = engine.scenario
    nb = sc.n_bs
    beta = [sp.beta for sp in sc.demands]
    costs = [bs.lease_cost for bs in sc.base_stations]
    stack = [(frozenset(), frozenset(range(nb)), -math.inf, 0)]
    best, best_val = None, math.inf
    nodes = 0
    bounds = []
    t0 = time.monotonic()
    while stack:
        if nodes and nodes % 10_000 == 0:
            stack.sort(key=lambda t: -t[2])
        F, U, parent, depth = stack.pop()
        if parent >= best_val - COST_TOL:
            continue
        if nodes >= node_limit or time.monotonic() - t0 > time_limit:
            raise BudgetExceeded("branch-and-bound budget exceeded", nodes, best)
        nodes += 1
        base = _cost(sc, F)
        coef = coverage_coef(engine, F | U, interferers=F)
        sol = delta_lp(coef, beta, y_costs={b: costs[b] for b in U} or None)
        if sol.status != OPTIMAL:
            if log:
                log(f"node={nodes} depth={depth} bound=inf incumbent={best_val:.6f}")
            continue
        bound = base + (sol.objective if U else 0.0)
        bounds.append(bound)
        if log:
            log(f"node={nodes} depth={depth} bound={bound:.6f} incumbent={best_val:.6f}")
        if bound >= best_val - COST_TOL:
            continue
        ys = dict(zip(sorted(U), sol.x[nb * sc.n_sp:])) if U else {}
        frac = {b: min(v, 1 - v) for b, v in ys.items() if min(v, 1 - v) > INTEGRALITY_TOL}
        if frac:
            var = min(frac, key=lambda b: (-frac[b], -costs[b], b))
        else:
            chosen = F | {b for b, v in ys.items() if v > 0.5}
            alloc = _allocation_for(engine, sorted(chosen))
            if alloc is not None:
                c = alloc.cost(sc)
                if c < best_val - COST_TOL:
                    best, best_val = alloc, c
                continue
            extra = [b for b in chosen - F]
            if not extra:
                continue
            var = min(extra, key=lambda b: (-costs[b], b))
        U2 = U - {var}
        stack.append((F, U2, bound, depth + 1))
        stack.append((F | {var}, U2, bound, depth + 1))
    if best is None:
        return BnBResult(INFEASIBLE, nodes=nodes, relaxation_bounds=bounds, method="direct")
    return BnBResult(OPTIMAL, best, best_val, nodes, 0.0, bounds, "direct")


def solve_exact(scenario: Scenario, engine: CoverageEngine | None = None,
                cfg: QuadratureConfig | None = None, path: str = "auto", **kw) -> BnBResult:
    """Proven-optimal leasing and slicing.

    ``path`` selects the MILP route (subset expansion + gadgets), the direct
    x-branching route, or ``auto`` (MILP when the expansion is small).
    """
    engine = engine or CoverageEngine(scenario, cfg)
    if path == "auto":
        small = (scenario.n_bs - 1 <= engine.cfg.max_expansion_size
                 and milp_size(scenario) <= MILP_AUX_LIMIT)
        path = "milp" if small else "direct"
    if path == "milp":
        if scenario.n_bs - 1 > engine.cfg.max_expansion_size:
            raise ExpansionTooLarge("subset expansion too large; use the direct path")
        return solve_milp(scenario, engine, **kw)[0]
    if path == "direct":
        return solve_direct(scenario, engine, **kw)
    raise ValueError(f"unknown path {path!r}")
