"""Exact MILP reformulation of the leasing/slicing problem.

Each coverage constraint is the subset expansion

    sum_b sum_{J subset B-b} coef(b, s, J) * delta_bs * prod_{j in J} x_j >= beta_s,

and every product is replaced by auxiliary variables: a shared binary-product
variable ``X_J`` for ``|J| >= 2`` and a mixed-product variable
``z = X_J * delta_bs`` per term. At any integral ``x`` the gadgets pin the
auxiliaries to the products they stand for.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .coverage import CoverageCoefficients
from .scenario import Allocation, Scenario

DROP_TOL = 1e-12
DROPPED_MASS_LIMIT = 1e-9
INTEGRALITY_TOL = 1e-6

BINARY, CONTINUOUS = "binary", "continuous"
LE, GE, EQ = "<=", ">=", "="


class ModelError(ValueError):
    pass


class NonIntegralSolution(ValueError):
    pass


@dataclass
class Variable:
    name: str
    kind: str
    lb: float = 0.0
    ub: float = 1.0


@dataclass
class Constraint:
    coefs: dict[int, float]
    sense: str
    rhs: float
    name: str = ""


@dataclass
class MILPModel:
    """Minimisation model with sparse rows over indexed variables."""

    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    _names: dict[str, int] = field(default_factory=dict, repr=False)

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def add_var(self, name: str, kind: str = CONTINUOUS, lb: float = 0.0, ub: float = 1.0) -> int:
        if name in self._names:
            raise ModelError(f"duplicate variable {name}")
        if kind == BINARY and (lb, ub) != (0.0, 1.0):
            raise ModelError("binary variables must have bounds [0, 1]")
        if lb > ub:
            raise ModelError(f"{name}: empty bounds")
        self.variables.append(Variable(name, kind, float(lb), float(ub)))
        self._names[name] = len(self.variables) - 1
        return len(self.variables) - 1

    def index(self, name: str) -> int:
        try:
            return self._names[name]
        except KeyError:
            raise ModelError(f"unknown variable {name}") from None

    def _check(self, idx: int) -> None:
        if not 0 <= idx < len(self.variables):
            raise ModelError(f"unknown variable index {idx}")

    def add_constraint(self, coefs: dict[int, float], sense: str, rhs: float, name: str = "") -> int:
        if sense not in (LE, GE, EQ):
            raise ModelError(f"bad sense {sense!r}")
        for i in coefs:
            self._check(i)
        self.constraints.append(Constraint(dict(coefs), sense, float(rhs), name))
        return len(self.constraints) - 1

    def binaries(self) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.kind == BINARY]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        return lb, ub

    def dense(self):
        """(c, A, senses, rhs) with A of shape (n_constraints, n_vars)."""
        c = np.zeros(self.n_vars)
        for i, v in self.objective.items():
            c[i] = v
        A = np.zeros((len(self.constraints), self.n_vars))
        for r, con in enumerate(self.constraints):
            for i, v in con.coefs.items():
                A[r, i] = v
        senses = [con.sense for con in self.constraints]
        rhs = np.array([con.rhs for con in self.constraints])
        return c, A, senses, rhs

    def objective_value(self, values: np.ndarray) -> float:
        return math.fsum(v * values[i] for i, v in self.objective.items())

    def max_violation(self, values: np.ndarray) -> float:
        worst = 0.0
        lb, ub = self.bounds()
        worst = max(worst, float(np.max(lb - values, initial=0.0)), float(np.max(values - ub, initial=0.0)))
        for con in self.constraints:
            lhs = math.fsum(v * values[i] for i, v in con.coefs.items())
            if con.sense == LE:
                worst = max(worst, lhs - con.rhs)
            elif con.sense == GE:
                worst = max(worst, con.rhs - lhs)
            else:
                worst = max(worst, abs(lhs - con.rhs))
        return worst

    def to_lp(self) -> str:
        """Plain-text dump in an LP-file style (minimize / subject to / bounds / binaries)."""
        names = [v.name for v in self.variables]

        def row(coefs):
            parts = []
            for i in sorted(coefs):
                v = coefs[i]
                parts.append(f"{'-' if v < 0 else '+'} {abs(v):.17g} {names[i]}")
            return " ".join(parts) if parts else "0"

        out = io.StringIO()
        out.write("Minimize\n obj: " + row(self.objective) + "\nSubject To\n")
        for r, con in enumerate(self.constraints):
            out.write(f" {con.name or f'c{r}'}: {row(con.coefs)} {con.sense} {con.rhs:.17g}\n")
        out.write("Bounds\n")
        for v in self.variables:
            if v.kind != BINARY:
                out.write(f" {v.lb:.17g} <= {v.name} <= {v.ub:.17g}\n")
        out.write("Binaries\n")
        for v in self.variables:
            if v.kind == BINARY:
                out.write(f" {v.name}\n")
        out.write("End\n")
        return out.getvalue()


@dataclass
class LinearizationMap:
    binary_products: dict[frozenset, int] = field(default_factory=dict)
    mixed_products: dict[tuple, int] = field(default_factory=dict)
    x: list[int] = field(default_factory=list)
    delta: dict[tuple[int, int], int] = field(default_factory=dict)
    coverage_rows: list[int] = field(default_factory=list)
    coverage_terms: list[dict[int, float]] = field(default_factory=list)
    dropped_mass: float = 0.0


def _binary_valued(model: MILPModel, idx: int) -> bool:
    v = model.variables[idx]
    return v.kind == BINARY or (v.lb == 0.0 and v.ub == 1.0)


def linearize_binary_product(model: MILPModel, vars: Iterable[int], lin: LinearizationMap | None = None
                             ) -> int:
    """Aux ``X`` with ``X <= x_j`` for each j and ``X >= sum x_j - (|J| - 1)``."""
    vars = sorted(set(int(v) for v in vars))
    if len(vars) < 2:
        raise ModelError("a binary product needs at least two variables")
    for v in vars:
        model._check(v)
        if model.variables[v].kind != BINARY:
            raise ModelError(f"{model.variables[v].name} is not binary")
    key = frozenset(vars)
    if lin is not None and key in lin.binary_products:
        return lin.binary_products[key]
    name = "X_" + "_".join(model.variables[v].name for v in vars)
    if name in model._names:
        return model.index(name)
    aux = model.add_var(name, CONTINUOUS, 0.0, 1.0)
    for v in vars:
        model.add_constraint({aux: 1.0, v: -1.0}, LE, 0.0, f"{name}_le_{model.variables[v].name}")
    coefs = {aux: 1.0}
    for v in vars:
        coefs[v] = -1.0
    model.add_constraint(coefs, GE, -(len(vars) - 1), f"{name}_ge_sum")
    if lin is not None:
        lin.binary_products[key] = aux
    return aux


def linearize_mixed_product(model: MILPModel, bin: int, cont: int, name: str | None = None) -> int:
    """Aux ``z = bin * cont`` via z <= bin, z <= cont, z >= cont - (1 - bin), z >= 0."""
    model._check(bin)
    model._check(cont)
    if not _binary_valued(model, bin):
        raise ModelError(f"{model.variables[bin].name} is not binary-valued")
    cv = model.variables[cont]
    if cv.ub > 1.0 or cv.lb < 0.0:
        raise ModelError(f"{cv.name}: bounds must lie in [0, 1] for the product gadget")
    name = name or f"z_{model.variables[bin].name}_{cv.name}"
    z = model.add_var(name, CONTINUOUS, 0.0, 1.0)
    model.add_constraint({z: 1.0, bin: -1.0}, LE, 0.0, f"{name}_le_bin")
    model.add_constraint({z: 1.0, cont: -1.0}, LE, 0.0, f"{name}_le_cont")
    model.add_constraint({z: 1.0, cont: -1.0, bin: -1.0}, GE, -1.0, f"{name}_ge")
    return z


def build_problem1(scenario: Scenario, coeffs: CoverageCoefficients,
                   drop_tol: float = DROP_TOL) -> tuple[MILPModel, LinearizationMap]:
    model = MILPModel()
    lin = LinearizationMap()
    nb, ns = scenario.n_bs, scenario.n_sp
    for b, bs in enumerate(scenario.base_stations):
        lin.x.append(model.add_var(f"x_{bs.id}", BINARY))
        model.objective[lin.x[b]] = bs.lease_cost
    for b, bs in enumerate(scenario.base_stations):
        for s, sp in enumerate(scenario.demands):
            lin.delta[(b, s)] = model.add_var(f"d_{bs.id}_{sp.sp_id}", CONTINUOUS, 0.0, 1.0)

    dropped = 0.0
    for s, sp in enumerate(scenario.demands):
        row: dict[int, float] = {}
        for b, bs in enumerate(scenario.base_stations):
            d = lin.delta[(b, s)]
            for subset, c in coeffs.terms(b, s):
                if abs(c) < drop_tol and dropped + abs(c) <= DROPPED_MASS_LIMIT:
                    dropped += abs(c)
                    continue
                if not subset:
                    row[d] = row.get(d, 0.0) + c
                    continue
                if len(subset) == 1:
                    bin_var = lin.x[subset[0]]
                else:
                    bin_var = linearize_binary_product(model, [lin.x[j] for j in subset], lin)
                tag = "_".join(scenario.base_stations[j].id for j in subset)
                z = linearize_mixed_product(model, bin_var, d, f"z_{tag}_{bs.id}_{sp.sp_id}")
                lin.mixed_products[(subset, b, s)] = z
                row[z] = row.get(z, 0.0) + c
        lin.coverage_terms.append(row)
        lin.coverage_rows.append(model.add_constraint(row, GE, sp.beta, f"cover_{sp.sp_id}"))
    lin.dropped_mass = dropped

    for b, bs in enumerate(scenario.base_stations):
        model.add_constraint({lin.delta[(b, s)]: 1.0 for s in range(ns)}, LE, 1.0, f"util_{bs.id}")
        for s in range(ns):
            model.add_constraint({lin.delta[(b, s)]: 1.0, lin.x[b]: -1.0}, LE, 0.0,
                                 f"link_{bs.id}_{scenario.demands[s].sp_id}")
    assert len(lin.x) == nb
    return model, lin


def extract_allocation(values: np.ndarray, lin: LinearizationMap, n_bs: int, n_sp: int,
                       tol: float = INTEGRALITY_TOL) -> Allocation:
    values = np.asarray(values, float)
    xs = values[lin.x]
    if np.any(np.abs(xs - np.round(xs)) > tol):
        raise NonIntegralSolution("lease variables are fractional")
    delta = np.zeros((n_bs, n_sp))
    for (b, s), i in lin.delta.items():
        delta[b, s] = values[i]
    x = np.round(xs).astype(int)
    delta = np.where(x[:, None] == 1, delta, 0.0)
    return Allocation(x, delta).cleaned()
