import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from builders import make_scenario, random_scenario, with_betas
from virtslice.allocators import (PARTIAL, SATISFIED, UNSERVED, ResidualCapacity, equal_split,
                                  greedy_allocate, knapsack_problem2, max_capped_coverage,
                                  sequential_allocate, solve_problem2)
from virtslice.coverage import CoverageEngine
from virtslice.geometry import voronoi_tessellation
from virtslice.montecarlo import VORONOI, TrialConfig, simulate_coverage
from virtslice.scenario import Allocation, ServiceDemand
from virtslice.solver import OPTIMAL, solve_exact


# -- greedy -----------------------------------------------------------------------

def test_greedy_single_station_sufficient():
    sc = make_scenario([(1.0, 1.0, 46.0, 1.0, 100.0), (0.4, 0.4, 30.0, 0.4, 100.0),
                        (1.6, 0.4, 30.0, 0.4, 100.0)],
                       [ServiceDemand("S1", 512.0, 0.2, 5.0, 1), ServiceDemand("S2", 512.0, 0.2, 5.0, 2)])
    g = greedy_allocate(sc)
    assert g.feasible and g.order == [0] and g.allocation.leased == [0]


def test_greedy_unreachable_beta():
    sc = make_scenario([(0.6, 1.0, 30.0, 0.5, 100.0), (1.4, 1.0, 30.0, 0.5, 200.0)],
                       [ServiceDemand("S", 512.0, 1.0, 5.0, 1)])
    g = greedy_allocate(sc)
    assert not g.feasible and g.allocation is None
    assert sorted(g.order) == [0, 1]


def test_greedy_output_meets_targets(engines):
    eng = engines("three_bs").rebind(with_betas(engines("three_bs").scenario, [0.3, 0.2, 0.1]))
    g = greedy_allocate(eng.scenario, engine=eng)
    assert g.feasible and g.allocation.violations() == []
    for s, sp in enumerate(eng.scenario.demands):
        assert eng.network_coverage(g.allocation, s) >= sp.beta - 1e-6
    assert all(b >= a for a, b in zip(g.scores, g.scores[1:]))


@pytest.mark.parametrize("seed", range(8))
def test_greedy_never_cheaper_than_exact(seed):
    sc = random_scenario(200 + seed, max_bs=5)
    eng = CoverageEngine(sc)
    g = greedy_allocate(sc, engine=eng)
    ex = solve_exact(sc, eng)
    if g.feasible:
        # a feasible greedy allocation is a feasible point of the exact problem
        assert ex.status == OPTIMAL
        assert g.allocation.cost(sc) >= ex.cost


def test_max_capped_coverage_caps_at_beta():
    coef = np.array([[0.5, 0.5], [0.3, 0.0]])
    val, delta = max_capped_coverage(coef, [0.2, 0.1])
    assert val == pytest.approx(0.3, abs=1e-9)
    assert np.all(delta.sum(axis=1) <= 1 + 1e-9)
    val, _ = max_capped_coverage(coef, [1.0, 1.0])
    assert val == pytest.approx(0.8, abs=1e-9)


# -- Problem 2 ---------------------------------------------------------------------

def test_problem2_zero_beta():
    out = solve_problem2(np.array([0.1, 0.2]), 0.0, ResidualCapacity.full(2))
    assert np.array_equal(out, np.zeros(2))


def test_problem2_infeasible():
    assert solve_problem2(np.array([0.1, 0.2]), 0.35, ResidualCapacity(np.array([1.0, 1.0]))) is None
    assert solve_problem2(np.array([0.1, 0.2]), 0.2, ResidualCapacity(np.array([1.0, 0.4]))) is None


def test_residual_capacity_validation():
    with pytest.raises(ValueError):
        ResidualCapacity(np.array([0.5, 1.2]))
    with pytest.raises(ValueError):
        ResidualCapacity(np.array([-0.1]))


@given(st.lists(st.floats(0.01, 0.5), min_size=1, max_size=6), st.floats(0.0, 1.0),
       st.lists(st.floats(0.0, 1.0), min_size=6, max_size=6))
def test_problem2_matches_knapsack(terms, frac, avail):
    terms = np.array(terms)
    res = ResidualCapacity(np.array(avail[:terms.size]))
    beta = frac * float(terms @ res.avail)
    lp = solve_problem2(terms, beta, res)
    ks = knapsack_problem2(terms, beta, res)
    assert (lp is None) == (ks is None)
    if lp is not None:
        assert lp.sum() == pytest.approx(ks.sum(), abs=1e-9)
        assert terms @ lp >= beta - 1e-9
        assert np.all(lp <= res.avail + 1e-12)


@pytest.mark.parametrize("terms,avail,beta", [((0.2, 0.3), (1.0, 1.0), 0.25),
                                              ((0.35, 0.1), (0.5, 0.8), 0.2),
                                              ((0.12, 0.12), (0.7, 0.9), 0.15)])
def test_problem2_grid_search(terms, avail, beta):
    terms, avail = np.array(terms), np.array(avail)
    lp = solve_problem2(terms, beta, ResidualCapacity(avail))
    step = 1e-3
    g0 = np.arange(0.0, avail[0] + step / 2, step)
    g1 = np.arange(0.0, avail[1] + step / 2, step)
    a, b = np.meshgrid(g0, g1, indexing="ij")
    ok = terms[0] * a + terms[1] * b >= beta - 1e-12
    grid_best = (a + b)[ok].min()
    assert lp.sum() <= grid_best + 1e-12
    assert lp.sum() >= grid_best - 2 * step


def test_problem2_full_residual_bound():
    terms = np.array([0.1, 0.25, 0.15])
    t = 0.6
    beta = t * terms.sum()
    lp = solve_problem2(terms, beta, ResidualCapacity.full(3))
    assert lp.sum() <= terms.size * t + 1e-12


@pytest.fixture(scope="module")
def three_cells(engines):
    eng = engines("three_bs")
    return eng, voronoi_tessellation(eng.scenario.locations, eng.scenario.region)


def test_problem2_three_bs_vs_linprog(three_cells):
    eng, cells = three_cells
    for sp in eng.scenario.demands:
        terms = eng.voronoi_terms(cells, sp)
        beta = 0.5 * terms.sum()
        lp = solve_problem2(terms, beta, ResidualCapacity.full(3))
        ref = optimize.linprog(np.ones(3), A_ub=-terms[None, :], b_ub=[-beta], bounds=(0, 1),
                               method="highs")
        assert lp.sum() == pytest.approx(ref.fun, abs=1e-9)
        full = Allocation(np.ones(3, int), np.outer(lp, np.eye(3)[sp.priority_rank - 1]))
        s = sp.priority_rank - 1
        assert eng.voronoi_rate_coverage(full, s, cells) == pytest.approx(beta, abs=1e-9)


# -- sequential ---------------------------------------------------------------------

def _check_outcome(sc, out):
    ranked = sorted(sc.demands, key=lambda d: d.priority_rank)
    states = [out.status[d.sp_id] for d in ranked]
    k = 0
    while k < len(states) and states[k] == SATISFIED:
        k += 1
    rest = states[k:]
    assert rest == [] or rest[0] in (PARTIAL, UNSERVED)
    assert all(st_ == UNSERVED for st_ in rest[1:])
    assert out.satisfied == [d.sp_id for d in ranked[:k]]
    hist = out.avail_history
    for s_idx, (prev, new) in enumerate(zip(hist, hist[1:])):
        s = sc.demands.index(ranked[s_idx])
        assert np.all(new <= prev + 1e-12)
        assert np.allclose(prev - new, out.allocation.delta[:, s], atol=1e-9)
    for d in ranked[:k]:
        assert out.coverage[d.sp_id] >= d.beta - 1e-9
    assert out.allocation.violations() == []


def test_sequential_one_sp_ample(three_cells):
    eng, cells = three_cells
    sc = eng.scenario
    one = with_betas(sc, [0.1, 0.1, 0.1])
    one = replace(one, demands=one.demands[:1])
    out = sequential_allocate(one, engine=CoverageEngine(one), cells=cells)
    assert out.status == {"SP1": SATISFIED}
    assert np.allclose(out.avail_history[-1], 1.0 - out.allocation.delta[:, 0], atol=1e-12)
    _check_outcome(one, out)


@pytest.mark.parametrize("betas", [(0.3, 0.2, 0.1), (0.5, 0.4, 0.3), (0.9, 0.8, 0.7), (0.05, 0.9, 0.1)])
def test_sequential_prefix_and_conservation(three_cells, betas):
    eng, cells = three_cells
    sc = with_betas(eng.scenario, betas)
    out = sequential_allocate(sc, engine=eng.rebind(sc), cells=cells)
    _check_outcome(sc, out)


def test_sequential_two_identical_sps(three_cells):
    eng, cells = three_cells
    sp = eng.scenario.demands[0]
    terms = eng.voronoi_terms(cells, sp)
    beta = 0.6 * float(terms.sum())
    a = replace(sp, sp_id="A", min_coverage_prob=beta, priority_rank=1)
    b = replace(sp, sp_id="B", min_coverage_prob=beta, priority_rank=2)
    sc = replace(eng.scenario, demands=(a, b))
    out = sequential_allocate(sc, engine=eng.rebind(sc), cells=cells)
    assert out.status == {"A": SATISFIED, "B": PARTIAL}
    assert np.allclose(out.allocation.delta.sum(axis=1), 1.0, atol=1e-9)
    assert out.coverage["B"] == pytest.approx(0.4 * terms.sum(), abs=1e-9)
    _check_outcome(sc, out)
    tc = TrialConfig(trials=200_000, seed=3, association_mode=VORONOI)
    full = Allocation(np.ones(3, int), out.allocation.delta)
    est = simulate_coverage(sc, full, 0, tc)
    assert est.mean >= beta - 0.03


# -- equal split --------------------------------------------------------------------

@pytest.mark.parametrize("ns", [1, 2, 3])
def test_equal_split(ns):
    demands = [ServiceDemand(f"S{k}", 512.0, 0.1, 5.0, k + 1) for k in range(ns)]
    sc = make_scenario([(0.5, 0.5, 30.0, 0.4, 1.0), (1.5, 1.5, 30.0, 0.4, 1.0)], demands)
    a = equal_split(sc)
    assert a.leased == [0, 1]
    assert np.all(a.delta == 1.0 / ns)
    assert np.allclose(a.delta.sum(axis=1), 1.0)
    assert a.violations() == []


def test_equal_split_three_sp_golden(goldens):
    a = equal_split(goldens["scenario_I"])
    assert a.delta.shape == (10, 3) and np.all(a.delta == 1.0 / 3)
    assert list(itertools.chain(a.x)) == [1] * 10
