from __future__ import annotations

import math

import numpy as np
import pytest

from parisian_ctmc.errors import DomainError, NumericalError
from parisian_ctmc.laplace import InversionParams, aliasing_error_constant, build_nodes, invert, invert_values


def test_default_grid_shape():
    g = build_nodes(1.0)
    assert g.size == 41
    assert g.nodes[0] == 7.5
    assert g.weights[0] == pytest.approx(math.exp(7.5) / 2, rel=1e-15)
    assert np.allclose(g.nodes.real, 7.5)


def test_imaginary_spacing():
    g = build_nodes(2.0)
    assert np.allclose(np.diff(g.nodes.imag), math.pi / 2)
    assert g.nodes[0] == pytest.approx(15 / 4)


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_rejects_nonpositive_time(t):
    with pytest.raises(DomainError):
        build_nodes(t)


def test_rejects_nonpositive_A():
    with pytest.raises(DomainError):
        build_nodes(1.0, A=0.0)


def test_weights_follow_euler_averaging():
    # the tail weights are the binomial cumulative probabilities; the head ones are unaveraged
    g = build_nodes(1.0, A=15, k1=4, k2=3)
    pref = math.exp(7.5)
    tail = np.abs(g.weights[1:]) / pref
    assert np.allclose(tail[:3], 1.0)
    assert np.allclose(tail[3:], [15 / 16, 11 / 16, 5 / 16, 1 / 16])
    assert np.all(np.sign(g.weights[1:]) == (-1.0) ** np.arange(1, 8))


def test_constant_function_aliasing_constant():
    # the method's bias for g = 1 is exactly sum_k e^{-kA}
    v = invert(lambda q: 1 / q, build_nodes(1.0))
    assert v - 1 == pytest.approx(aliasing_error_constant(15.0), abs=1e-9)
    assert abs(v - 1) < 1e-6


def test_exponential_pair():
    assert abs(invert(lambda q: 1 / (q + 1), build_nodes(1.0)) - math.exp(-1)) < 1e-6


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_shifted_step_pair(t):
    D = 1 / 12
    assert abs(invert(lambda q: np.exp(-q * D) / q, build_nodes(t)) - 1) < 1e-6


def test_shifted_step_before_jump():
    D = 1 / 12
    assert abs(invert(lambda q: np.exp(-q * D) / q, build_nodes(D / 2))) < 1e-6


@pytest.mark.parametrize("f", [lambda q: 1 / (q + 1), lambda q: 1 / (q + 2) ** 2, lambda q: 1 / (q * q + 1)])
def test_changing_A_moves_smooth_results_little(f):
    a = invert(f, build_nodes(1.0, A=15.0))
    b = invert(f, build_nodes(1.0, A=18.4))
    assert abs(a - b) < 1e-6


def test_linearity():
    g = build_nodes(1.3)
    f1 = lambda q: 1 / (q + 1)
    f2 = lambda q: q / (q * q + 4)
    lhs = invert(lambda q: 2.5 * f1(q) - 0.7 * f2(q), g)
    rhs = 2.5 * invert(f1, g) - 0.7 * invert(f2, g)
    assert abs(lhs - rhs) < 1e-13 * max(1.0, abs(lhs)) * math.exp(7.5 / 1.3)


def test_array_valued_transform():
    g = build_nodes(1.0)
    rates = np.array([0.5, 1.0, 2.0])
    out = invert(lambda q: 1 / (q + rates), g)
    assert np.allclose(out, np.exp(-rates), atol=1e-6)


def test_failure_reports_node_index():
    g = build_nodes(1.0)

    def bad(q):
        if q.imag > 10:
            raise ZeroDivisionError("boom")
        return 1 / q

    with pytest.raises(NumericalError, match="node 4"):
        invert(bad, g)


def test_nonfinite_values_rejected():
    g = build_nodes(1.0)
    vals = np.ones(g.size, complex)
    vals[3] = np.nan
    with pytest.raises(NumericalError, match="node 3"):
        invert_values(vals, g)


def test_params_bundle():
    p = InversionParams(A=18.4, k1=10, k2=12)
    g = p.grid(2.0)
    assert g.size == 23 and g.A == 18.4
