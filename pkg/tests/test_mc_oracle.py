from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg as sla

from parisian_ctmc.errors import DomainError
from parisian_ctmc.mc_oracle import CDF, Bond, JointMinHit, Payoff, clock_labels, simulate_parisian, simulate_states
from parisian_ctmc.parisian import ParisianProblem


def test_same_seed_is_bitwise_reproducible(bm_small):
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "below", 0.0, 0.3)
    a = simulate_parisian(gen, prob, CDF(1.0), 0.0, paths=20_000, seed=7)
    b = simulate_parisian(gen, prob, CDF(1.0), 0.0, paths=20_000, seed=7)
    c = simulate_parisian(gen, prob, CDF(1.0), 0.0, paths=20_000, seed=8)
    assert a == b
    assert a.mean != c.mean


def test_all_below_step_has_zero_variance(bm_small):
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "below", 10.0, 0.25)
    after = simulate_parisian(gen, prob, CDF(0.5), 0.0, paths=1000)
    before = simulate_parisian(gen, prob, CDF(0.2), 0.0, paths=1000)
    assert (after.mean, after.se) == (1.0, 0.0)
    assert (before.mean, before.se) == (0.0, 0.0)


def test_constant_rate_bond_deterministic_trigger(bm_small):
    # every state clocked: tau = D, so the bond pays exp(-c D) on every path
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "above", -10.0, 0.25)
    est = simulate_parisian(gen, prob, Bond(lambda x: np.ones_like(x), 1.0, lambda x: np.full_like(x, 0.2)),
                            0.0, paths=1000)
    assert est.se < 1e-15  # pathwise rate integrals differ only by rounding
    assert est.mean == pytest.approx(math.exp(-0.2 * 0.25), rel=1e-14)


def test_state_occupancy_matches_semigroup(bm_small):
    grid, gen = bm_small
    t, start = 0.4, 10
    states = simulate_states(gen, grid.nodes[start], t, paths=100_000, seed=3)
    freq = np.bincount(states, minlength=grid.size) / states.size
    p = sla.expm(gen.dense() * t)[start]
    se = np.sqrt(p * (1 - p) / states.size)
    assert np.all(np.abs(freq - p) <= 4 * se + 1e-12)


def test_payoff_functional_without_trigger_is_zero(bm_small):
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "below", -10.0, 0.25)
    est = simulate_parisian(gen, prob, Payoff(lambda x: 1 + x**2, 1.0, 0.05), 0.0, paths=500)
    assert est.mean == 0.0


def test_joint_trigger_from_start_at_barrier(bm_small):
    # starting at or above B triggers at time 0, so the value is the discounted European payoff
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "above", 5.0, 0.25)
    f = lambda x: np.ones_like(x)
    est = simulate_parisian(gen, prob, JointMinHit(1.0, f, 1.0, 0.05), 1.2, paths=500)
    assert est.mean == pytest.approx(math.exp(-0.05), rel=1e-14)


def test_multi_set_labels(bm_small):
    grid, gen = bm_small
    labels = np.where(grid.nodes < -0.5, 1, np.where(grid.nodes > 0.5, 2, 0))
    lab, Dw = clock_labels((labels, 0.3), grid.size)
    assert Dw == 0.3 and lab.dtype == np.int64
    with pytest.raises(DomainError):
        clock_labels((labels[:-1], 0.3), grid.size)


def test_infinite_horizon_reports_truncation(bm_small):
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "below", -1.9, 5.0)
    est = simulate_parisian(gen, prob, CDF(math.inf, max_time=0.5), 0.0, paths=200)
    # paths absorbed at an end of the grid are resolved (they can never move), the rest are truncated
    assert est.mean == 0.0
    assert 150 < est.truncated <= 200


@pytest.mark.parametrize("kwargs", [dict(paths=10), dict(x0=0.05)])
def test_input_validation(bm_small, kwargs):
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "below", 0.0, 0.3)
    args = dict(paths=1000, x0=0.0) | kwargs
    with pytest.raises(DomainError):
        simulate_parisian(gen, prob, CDF(1.0), args["x0"], paths=args["paths"])


def test_integer_start_index(bm_small):
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "below", 0.0, 0.3)
    a = simulate_parisian(gen, prob, CDF(1.0), 10, paths=1000, seed=1)
    b = simulate_parisian(gen, prob, CDF(1.0), grid.nodes[10], paths=1000, seed=1)
    assert a == b


def test_within():
    from parisian_ctmc.mc_oracle import PathEstimate

    e = PathEstimate(1.0, 0.1, 100, 0)
    assert e.within(1.29) and not e.within(1.31)
