from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import D, R, RS
from parisian_ctmc.errors import DomainError
from parisian_ctmc.extensions import (
    Interval,
    SetFamily,
    SVSpec,
    barrier_hit_price,
    build_rs_generator,
    min_parisian_hit_price,
    min_parisian_hit_transform,
    multi_sided_cdf,
    multi_sided_transform,
    parisian_bond_price,
    parisian_bond_transform_general,
    rs_parisian_price,
    rs_problem,
    rs_transform_general,
    sv_two_layer_build,
)
from parisian_ctmc.generator import build_generator
from parisian_ctmc.grid import uniform_grid
from parisian_ctmc.mc_oracle import Bond, JointMinHit, Payoff, simulate_parisian
from parisian_ctmc.model import RegimeModel, build_preset
from parisian_ctmc.parisian import ExpSettings, ParisianProblem, ParisianSolver, parisian_transform_general
from parisian_ctmc.pricing import PriceRequest, call_payoff, parisian_cdf, parisian_option_price

EXACT = ExpSettings(method="exact")


@pytest.fixture(scope="module")
def bs_uniform():
    m = build_preset("BS", {"sigma": 0.3, "r": R})
    grid = uniform_grid(math.log(90) - 1, math.log(90) + 1, 60)
    return m, grid, build_generator(m, grid)


@pytest.fixture(scope="module")
def bm_sym():
    grid = uniform_grid(-2.0, 2.0, 40)
    return grid, build_generator(build_preset("BM", {}), grid)


@pytest.fixture(scope="module")
def cir_chain():
    grid = uniform_grid(0.005, 0.205, 40)
    model = build_preset("CIR", {"kappa": 0.5, "theta": 0.05, "sigma": 0.1})
    return grid, build_generator(model, grid)


# ----------------------------------------------------------------- set families


def test_interval_ends():
    iv = Interval(0.0, 1.0, lo_closed=True)
    assert list(iv.contains([0.0, 0.5, 1.0])) == [True, True, False]
    assert list(Interval(hi=0.0).contains([-5.0, 0.0])) == [True, False]


def test_family_rejects_overlap_and_empty():
    fam = SetFamily(((Interval(hi=1.0),), (Interval(lo=0.0),)))
    with pytest.raises(DomainError):
        fam.masks(np.linspace(-1, 2, 7))
    with pytest.raises(DomainError):
        SetFamily(())
    with pytest.raises(DomainError):
        SetFamily.two_sided(1.0, 0.0)


def test_union_mask():
    fam = SetFamily.two_sided(-0.5, 0.5)
    nodes = np.linspace(-1, 1, 5)
    assert list(fam.union_mask(nodes)) == [True, False, False, False, True]


# ------------------------------------------------------------------ multi-sided


def test_multi_sided_single_set_reduction(bs_uniform):
    _, grid, gen = bs_uniform
    L = grid.nodes[25]
    for q in (2 + 3j, 0.4):
        ref = parisian_transform_general(gen, ParisianProblem.from_grid(grid, "below", L, D), q).H
        got = multi_sided_transform(gen, SetFamily(((Interval(hi=L),),)), D, q).H
        assert np.max(np.abs(got - ref)) < 1e-10


def test_multi_sided_above_reduction(bs_uniform):
    _, grid, gen = bs_uniform
    L = grid.nodes[30]
    ref = parisian_transform_general(gen, ParisianProblem.from_grid(grid, "above", L, D), 1.5 + 1j).H
    got = multi_sided_transform(gen, SetFamily(((Interval(lo=L),),)), D, 1.5 + 1j).H
    assert np.max(np.abs(got - ref)) < 1e-10


@pytest.mark.parametrize("q", [0.1, 1.0, 10.0])
def test_two_sided_bounds(bm_sym, q):
    grid, gen = bm_sym
    h = multi_sided_transform(gen, SetFamily.two_sided(-0.5, 0.7), 0.3, q).h
    assert np.all(np.abs(h.imag) < 1e-14)
    assert h.real.min() >= -1e-12 and h.real.max() <= 1 + 1e-12


def test_two_sided_reflection_symmetry(bm_sym):
    grid, gen = bm_sym
    for q in (0.8, 7.5 + 4j):
        h = multi_sided_transform(gen, SetFamily.two_sided(-0.5, 0.5), 0.3, q).h
        assert np.max(np.abs(h - h[::-1])) < 1e-10


def test_two_sided_dominates_each_side(bm_sym):
    grid, gen = bm_sym
    both = multi_sided_cdf(gen, SetFamily.two_sided(-0.5, 0.5), 0.3, 1.0, 0.0)
    low = parisian_cdf(gen, ParisianProblem.from_grid(grid, "below", -0.5, 0.3), 1.0, 0.0)
    high = parisian_cdf(gen, ParisianProblem.from_grid(grid, "above", 0.5, 0.3), 1.0, 0.0)
    assert both >= max(low, high) - 1e-6
    assert both <= low + high + 1e-6


# --------------------------------------------------------------- MinParisianHit


def test_minhit_reduces_to_above_side_when_B_unreachable(bs_uniform):
    _, grid, gen = bs_uniform
    L = grid.nodes[25]
    q = 2.05 + 3j
    ref = parisian_transform_general(gen, ParisianProblem.from_grid(grid, "above", L, D), q).H
    got = min_parisian_hit_transform(gen, L, D, grid.nodes[-1] + 1.0, q)
    assert np.max(np.abs(got - ref)) < 1e-10


def test_minhit_long_window_is_barrier_option(bs_uniform):
    _, grid, gen = bs_uniform
    x0, L, B = grid.nodes[30], grid.nodes[28], grid.nodes[36]
    f = call_payoff(95.0)
    a = min_parisian_hit_price(gen, L, 5.0, B, f, 1.0, R, x0)
    b = barrier_hit_price(gen, B, f, 1.0, R, x0)
    assert abs(a - b) < 1e-6


def test_minhit_rows_subprobability(bs_uniform):
    _, grid, gen = bs_uniform
    H1 = min_parisian_hit_transform(gen, grid.nodes[28], D, grid.nodes[36], 0.5)
    assert np.all(H1.real >= -1e-12)
    assert np.all(H1.real.sum(axis=1) <= 1 + 1e-12)


def test_minhit_rejects_B_below_L(bs_uniform):
    _, grid, gen = bs_uniform
    with pytest.raises(DomainError):
        min_parisian_hit_transform(gen, 4.6, D, 4.5, 1.0)


def test_minhit_matches_monte_carlo(bm_sym):
    grid, gen = bm_sym
    L, B, Dw, T = 0.0, 1.0, 0.2, 1.0
    f = lambda x: 1.0 + x**2
    x0 = grid.nodes[18]
    value = min_parisian_hit_price(gen, L, Dw, B, f, T, 0.05, x0)
    prob = ParisianProblem.from_grid(grid, "above", L, Dw)
    est = simulate_parisian(gen, prob, JointMinHit(B, f, T, 0.05), x0, paths=100_000, seed=21)
    assert est.within(value, 3), (value, est)


# ------------------------------------------------------------------------ bonds


def test_bond_solver_matches_literal_form(cir_chain):
    grid, gen = cir_chain
    f = lambda x: np.ones_like(x)
    for q in (0.7, 7.5 + 2j):
        ref = parisian_bond_transform_general(gen, 0.06, 0.25, f, q, exp=EXACT)
        prob = ParisianProblem("above", 0.06, 0.25, grid.nodes)
        killed = gen.matrix - np.diag(grid.nodes)
        got = ParisianSolver(killed, prob, EXACT).apply([q], np.ones(grid.size))[0]
        assert np.max(np.abs(got - ref)) < 1e-10


def test_bond_zero_rate_is_parisian_cdf(cir_chain):
    grid, gen = cir_chain
    x0 = grid.nodes[10]
    bond = parisian_bond_price(gen, 0.06, 0.25, lambda x: np.ones_like(x), 2.0, x0, rate=lambda x: np.zeros_like(x))
    cdf = parisian_cdf(gen, ParisianProblem("above", 0.06, 0.25, grid.nodes), 2.0, x0)
    assert abs(bond - cdf) < 1e-12


def test_cir_bond_in_unit_interval(cir_chain):
    grid, gen = cir_chain
    vals = parisian_bond_price(gen, 0.06, 0.25, lambda x: np.ones_like(x), 2.0, 0.05, all_states=True)
    assert vals.min() > -1e-6 and vals.max() <= 1 + 1e-6
    assert vals[grid.nodes > 0.06].max() > 0


def test_bond_constant_rate_matches_monte_carlo(cir_chain):
    grid, gen = cir_chain
    x0 = grid.nodes[14]
    rate = lambda x: np.full_like(x, 0.04)
    value = parisian_bond_price(gen, 0.06, 0.25, lambda x: np.ones_like(x), 2.0, x0, rate=rate)
    prob = ParisianProblem("above", 0.06, 0.25, grid.nodes)
    est = simulate_parisian(gen, prob, Bond(lambda x: np.ones_like(x), 2.0, rate), x0, paths=100_000, seed=31)
    assert est.within(value, 3), (value, est)


def test_bond_rejects_unsafe_negative_rates(cir_chain):
    grid, gen = cir_chain
    with pytest.raises(DomainError):
        parisian_bond_price(gen, 0.06, 0.25, lambda x: np.ones_like(x), 1.0, 0.05,
                            rate=lambda x: np.full_like(x, -100.0))


# -------------------------------------------------------------- regime switching


@pytest.fixture(scope="module")
def rs_small():
    model = build_preset("RS_BS", dict(RS, r=R))
    grid = uniform_grid(math.log(90) - 1, math.log(90) + 1, 40)
    return model, grid, build_rs_generator(model, grid)


def test_rs_kronecker_structure(rs_small):
    model, grid, rs = rs_small
    n = grid.size
    G = rs.dense()
    lam = model.regime_generator
    for i in range(2):
        for j in range(2):
            blk = G[i * n:(i + 1) * n, j * n:(j + 1) * n]
            if i == j:
                expected = build_generator(model.regimes[i], grid).dense() + lam[i, i] * np.eye(n)
            else:
                expected = lam[i, j] * np.eye(n)
            assert np.max(np.abs(blk - expected)) < 1e-12
    assert np.max(np.abs(G.sum(axis=1))) < 1e-12


def test_rs_single_regime_reduction(bs_uniform):
    m, grid, gen = bs_uniform
    rs = build_rs_generator(RegimeModel((m,), np.zeros((1, 1))), grid)
    x0 = grid.nodes[30]
    L = 90 * math.exp(-0.05)
    f = lambda s: np.maximum(s - 95, 0)
    a = rs_parisian_price(rs, L, D, f, 1.0, R, (x0, 0))
    req = PriceRequest(call_payoff(95.0), 1.0, R, x0, ParisianProblem.from_grid(grid, "below", math.log(L), D))
    b = parisian_option_price(gen, req)
    assert abs(a - b) < 1e-10


def test_rs_frozen_regimes_decouple(rs_small):
    model, grid, _ = rs_small
    frozen = RegimeModel(model.regimes, np.zeros((2, 2)))
    rs = build_rs_generator(frozen, grid)
    x0 = grid.nodes[20]
    f = lambda s: np.maximum(s - 95, 0)
    for k, sub in enumerate(model.regimes):
        gen = build_generator(sub, grid)
        req = PriceRequest(call_payoff(95.0), 1.0, R, x0, ParisianProblem.from_grid(grid, "below", math.log(90), D))
        assert abs(rs_parisian_price(rs, 90.0, D, f, 1.0, R, (x0, k)) - parisian_option_price(gen, req)) < 1e-10


def test_rs_general_matches_solver(rs_small):
    _, grid, rs = rs_small
    q = 7.5 + 3j
    ref = rs_transform_general(rs, 90.0, D, q).H
    w = 1 + np.cos(rs.zeta / 10)
    got = ParisianSolver(rs.matrix, rs_problem(rs, 90.0, D)).apply([q], w)[0]
    assert np.max(np.abs(ref @ w - got)) < 1e-10


def test_rs_structural_zeros(rs_small):
    _, grid, rs = rs_small
    H = rs_transform_general(rs, 90.0, D, 2.0).H
    assert np.all(H[:, rs.zeta >= 90.0] == 0)


def test_rs_matches_monte_carlo(rs_small):
    _, grid, rs = rs_small
    i0 = rs.index(grid.nodes[20], 0)
    f = np.maximum(rs.zeta - 95, 0)
    value = rs_parisian_price(rs, 90.0, D, f, 1.0, R, (grid.nodes[20], 0))
    est = simulate_parisian(rs.matrix, rs_problem(rs, 90.0, D), Payoff(f, 1.0, R), i0,
                            paths=100_000, seed=41, nodes=rs.zeta)
    assert est.within(value, 3), (value, est)


def test_rs_index_validation(rs_small):
    _, grid, rs = rs_small
    with pytest.raises(DomainError):
        rs.index(grid.nodes[3] + 1e-3, 0)
    with pytest.raises(DomainError):
        rs.index(grid.nodes[3], 2)


# ------------------------------------------------------------ stochastic volatility


def _bs_like_spec(rho=0.0):
    return SVSpec(
        omega=lambda s, v: R * s,
        m=lambda v: 0.3 + 0 * np.asarray(v, float),
        Gamma=lambda s: s,
        mu=lambda v: 0 * np.asarray(v, float),
        sigma=lambda v: 0.1 + 0 * np.asarray(v, float),
        rho=rho,
    )


def test_sv_constant_vol_reduces_to_black_scholes(bs_uniform):
    m, grid, gen = bs_uniform
    rs = sv_two_layer_build(_bs_like_spec(), [0.1, 0.2], grid)
    assert np.allclose(rs.zeta[: grid.size], np.exp(grid.nodes), rtol=1e-10)
    x0 = grid.nodes[30]
    f = lambda s: np.maximum(s - 95, 0)
    a = rs_parisian_price(rs, 90.0, D, f, 1.0, R, (x0, 0))
    req = PriceRequest(call_payoff(95.0), 1.0, R, x0, ParisianProblem.from_grid(grid, "below", math.log(90), D))
    assert abs(a - parisian_option_price(gen, req)) < 1e-8


def test_sv_heston_like_generator_is_valid():
    kappa, theta, xi, rho = 2.0, 0.04, 0.3, -0.5
    spec = SVSpec(
        omega=lambda s, v: R * s,
        m=lambda v: np.sqrt(np.asarray(v, float)),
        Gamma=lambda s: s,
        mu=lambda v: kappa * (theta - np.asarray(v, float)),
        sigma=lambda v: xi * np.sqrt(np.asarray(v, float)),
        rho=rho,
        s_ref=90.0,
        v_ref=0.04,
    )
    grid = uniform_grid(-0.8, 0.8, 30)
    v_nodes = np.linspace(0.01, 0.12, 6)
    rs = sv_two_layer_build(spec, v_nodes, grid)
    G = rs.dense()
    off = G - np.diag(np.diag(G))
    assert off.min() >= 0
    assert np.max(np.abs(G.sum(axis=1))) < 1e-10
    for k in range(v_nodes.size):
        assert np.all(np.diff(rs.zeta[rs.regime_slice(k)]) > 0)


def test_sv_rejects_bad_correlation(bs_uniform):
    _, grid, _ = bs_uniform
    with pytest.raises(DomainError):
        sv_two_layer_build(_bs_like_spec(rho=1.5), [0.1, 0.2], grid)
