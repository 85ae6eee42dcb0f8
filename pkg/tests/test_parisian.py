from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg as sla

from conftest import D, random_complex_nodes
from parisian_ctmc.errors import DomainError, ParisianError
from parisian_ctmc.generator import build_generator
from parisian_ctmc.grid import uniform_grid
from parisian_ctmc.laplace import build_nodes
from parisian_ctmc.mc_oracle import CDF, simulate_parisian
from parisian_ctmc.model import build_preset
from parisian_ctmc.parisian import (
    ExpSettings,
    ParisianProblem,
    ParisianSolver,
    first_passage_blocks,
    parisian_transform_bd,
    parisian_transform_general,
)

EXACT = ExpSettings(method="exact")


def _bm(lo=-2.0, hi=2.0, n=20, mu=0.0):
    grid = uniform_grid(lo, hi, n)
    return grid, build_generator(build_preset("BM", {"mu": mu}), grid)


def test_problem_masks_partition():
    prob = ParisianProblem("below", 0.0, 1.0, np.linspace(-1, 1, 5))
    assert np.array_equal(prob.lower, [True, True, False, False, False])
    assert np.all(prob.lower ^ prob.upper)
    assert prob.L_plus == 2 and prob.L_minus == 1
    above = ParisianProblem("above", 0.0, 1.0, np.linspace(-1, 1, 5))
    assert np.array_equal(above.inside, [False, False, False, True, True])


@pytest.mark.parametrize("side", ["left", ""])
def test_problem_rejects_bad_side(side):
    with pytest.raises(DomainError):
        ParisianProblem(side, 0.0, 1.0, np.zeros(3))


@pytest.mark.parametrize("Dv", [0.0, -1.0])
def test_problem_rejects_nonpositive_window(Dv):
    with pytest.raises(DomainError):
        ParisianProblem("below", 0.0, Dv, np.zeros(3))


def test_blocks_all_below(bm_small):
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "below", 10.0, 0.5)
    blk = first_passage_blocks(gen, prob, 2.0)
    assert np.all(blk.U1 == 0)
    assert np.allclose(blk.Um, np.eye(grid.size))


def test_blocks_window_zero_limit(bm_small):
    # exp(0) = I: V -> I^-_L and U2 -> I^-_L U1; D is required positive, so use a tiny window
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "below", 0.0, 1e-12)
    blk = first_passage_blocks(gen, prob, 1.5, EXACT)
    low = np.diag(prob.lower.astype(float))
    assert np.max(np.abs(blk.V - low)) < 1e-9
    assert np.max(np.abs(blk.U2 - low @ blk.U1)) < 1e-9


def test_V_row_sums_match_monte_carlo(bm_small):
    # V e at x = P_x[chain stays below L for D]; the oracle with t = D estimates exactly that
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "below", 0.0, 0.25)
    V = first_passage_blocks(gen, prob, 1.0, EXACT).V
    x = grid.nodes[7]
    est = simulate_parisian(gen, prob, CDF(prob.D + 1e-12), x, paths=100_000, seed=11)
    assert est.within(V[7].sum(), 3)


def test_all_below_is_deterministic(bm_small):
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "below", 10.0, D)
    for q in (0.3, 7.5 + 2j):
        h = parisian_transform_general(gen, prob, q, EXACT).h
        assert np.max(np.abs(h - np.exp(-q * D))) < 1e-12


def test_all_above_never_triggers(bm_small):
    grid, gen = bm_small
    prob = ParisianProblem.from_grid(grid, "below", -10.0, D)
    assert np.all(parisian_transform_general(gen, prob, 1.0).h == 0)
    assert np.all(ParisianSolver(gen, prob).h([1.0]) == 0)


def test_structural_zero_columns(bs_chain):
    _, gen, prob = bs_chain
    H = parisian_transform_general(gen, prob, 7.5 + 3j).H
    assert np.all(H[:, prob.upper] == 0)


@pytest.mark.parametrize("q", [0.05, 1.0, 7.5, 40.0])
def test_h_in_unit_interval(bs_chain, q):
    _, gen, prob = bs_chain
    h = parisian_transform_general(gen, prob, q).h
    assert np.all(np.abs(h.imag) < 1e-14)
    assert h.real.min() >= -1e-12 and h.real.max() <= 1 + 1e-12


def test_h_nonincreasing_in_q(bs_chain):
    _, gen, prob = bs_chain
    qs = np.array([0.01, 0.1, 0.5, 1.0, 3.0, 7.5, 20.0])
    h = ParisianSolver(gen, prob).h(qs).real
    assert np.all(np.diff(h, axis=0) <= 1e-12)


def test_bd_matches_general_paper_setup(bs_chain):
    _, gen, prob = bs_chain
    x0 = gen.nodes.size // 2
    gen_h = parisian_transform_general(gen, prob, 7.5).h
    bd = parisian_transform_bd(gen, prob, 7.5)
    assert abs(bd.h[x0] - gen_h[x0]) < 1e-10
    assert np.max(np.abs(bd.h - gen_h)) < 1e-10


def test_bd_matches_general_at_complex_nodes(bs_chain):
    _, gen, prob = bs_chain
    for q in random_complex_nodes(5, seed=2):
        ref = parisian_transform_general(gen, prob, q)
        bd = parisian_transform_bd(gen, prob, q, materialize=True)
        assert np.max(np.abs(bd.h - ref.h)) < 1e-10
        assert np.max(np.abs(bd.H - ref.H)) < 1e-10


@pytest.mark.parametrize("side", ["below", "above"])
def test_solver_routes_match_general(bs_chain, side):
    grid, gen, prob = bs_chain
    prob = ParisianProblem.from_grid(grid, side, prob.L, prob.D)
    qs = random_complex_nodes(4, seed=5)
    w = 2 + np.cos(5 * grid.nodes)
    ref = np.stack([parisian_transform_general(gen, prob, q).H @ w for q in qs])
    scale = np.max(np.abs(ref))
    assert scale > 0.1
    for route in ("reduced", "dense"):
        g = gen.dense() if route == "dense" else gen
        y = ParisianSolver(g, prob, route=route).apply(qs, w)
        assert np.max(np.abs(y - ref)) < 1e-10 * scale


def test_solver_on_jump_chain_matches_general(kou_small):
    grid, gen = kou_small
    prob = ParisianProblem.from_grid(grid, "below", grid.nodes[18], D)
    qs = random_complex_nodes(3, seed=8)
    w = np.cos(grid.nodes)
    ref = np.stack([parisian_transform_general(gen, prob, q).H @ w for q in qs])
    for route in ("reduced", "dense"):
        y = ParisianSolver(gen if route == "reduced" else gen.dense(), prob, route=route).apply(qs, w)
        assert np.max(np.abs(y - ref)) < 1e-10


def test_bd_rejects_jump_chain(kou_small):
    grid, gen = kou_small
    prob = ParisianProblem.from_grid(grid, "below", grid.nodes[18], D)
    with pytest.raises(ParisianError):
        parisian_transform_bd(gen, prob, 1.0)


def test_bd_renewal_identity():
    # h(L^-) = e^{-qD} (V e)(L^-) / (1 - u^-(L^+) u^+(L^-)), rebuilt from its own blocks
    grid, gen = _bm(-3, 3, 30)
    prob = ParisianProblem.from_grid(grid, "below", 0.0, 1.0)
    q = 0.8
    bd = parisian_transform_bd(gen, prob, q, EXACT)
    exit_, entry = prob.boundary_pair()
    blk = first_passage_blocks(gen, prob, q, EXACT)
    u_plus = blk.U1[entry, exit_] - blk.U2[entry, exit_]
    u_minus = blk.Um[exit_, entry]
    expected = math.exp(-q) * blk.V[entry].sum() / (1 - u_minus * u_plus)
    assert abs(bd.h[entry] - expected) < 1e-12
    assert abs(bd.denominator - (1 - u_minus * u_plus)) < 1e-12


def test_bd_denominator_bounded_away_from_zero(bs_chain):
    _, gen, prob = bs_chain
    for q in build_nodes(1.0).nodes:
        assert abs(parisian_transform_bd(gen, prob, q).denominator) > 1e-3


def test_reflection_symmetry():
    # driftless BM on a symmetric grid: above at -L from -x equals below at L from x
    grid, gen = _bm(-2, 2, 40)
    L = 0.3
    below = ParisianProblem.from_grid(grid, "below", L, 0.5)
    above = ParisianProblem.from_grid(grid, "above", -L, 0.5)
    for q in (0.7, 7.5 + 5j):
        hb = parisian_transform_general(gen, below, q).h
        ha = parisian_transform_general(gen, above, q).h
        assert np.max(np.abs(hb - ha[::-1])) < 1e-10


def test_exact_and_rational_exponential_close(bs_chain):
    _, gen, prob = bs_chain
    h_rat = ParisianSolver(gen, prob).h([7.5])[0]
    h_ex = ParisianSolver(gen, prob, EXACT).h([7.5])[0]
    assert np.max(np.abs(h_rat - h_ex)) < 1e-5


def test_general_matches_literal_matrix_formula():
    # H = e^{-qD} (I - U)^{-1} I^-_L V with U = I^- U1 - I^- U2 + I^+ Um, all built densely
    grid, gen = _bm(-2, 2, 16, mu=0.3)
    prob = ParisianProblem.from_grid(grid, "below", 0.25, 0.4)
    G = gen.dense()
    q = 1.3 + 0.4j
    n = G.shape[0]
    Im = np.diag(prob.lower.astype(float))
    Ip = np.eye(n) - Im
    V = sla.expm(Im @ G * prob.D) @ Im
    U1 = np.linalg.solve(q * Im - Im @ G + Ip, Ip)
    U2 = np.exp(-q * prob.D) * V @ U1
    Um = np.linalg.solve(q * Ip - Ip @ G + Im, Im)
    U = Im @ U1 - Im @ U2 + Ip @ Um
    H = np.exp(-q * prob.D) * np.linalg.solve(np.eye(n) - U, Im @ V)
    got = parisian_transform_general(gen, prob, q, EXACT).H
    assert np.max(np.abs(got - H)) < 1e-12
