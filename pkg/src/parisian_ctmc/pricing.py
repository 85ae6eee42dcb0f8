"""Parisian CDFs, option prices, ruin probabilities and refinement studies."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from .errors import DomainError, ParisianError
from .generator import Generator, build_generator
from .grid import Grid, pu_grid_from_budget, uniform_grid
from .laplace import InversionParams, invert_values
from .linalg import MaskedOperator, factorize
from .model import ModelSpec
from .parisian import ExpSettings, ParisianProblem, ParisianSolver

__all__ = [
    "PriceRequest",
    "RuinEstimate",
    "european_transform",
    "european_transforms",
    "parisian_cdf",
    "parisian_cdf_curve",
    "parisian_option_price",
    "ruin_probability",
    "richardson_extrapolate",
    "two_grid_price_KeqL",
    "value_at",
    "call_payoff",
    "put_payoff",
    "OptionSetup",
    "ConvergenceRow",
    "ConvergenceStudy",
    "convergence_study",
    "fitted_order",
]


def _gmat(gen):
    return gen.matrix if isinstance(gen, Generator) else gen


def _nodes(gen, prob=None):
    if isinstance(gen, Generator):
        return gen.nodes
    return prob.nodes


def value_at(nodes, values, x0: float) -> float:
    """``values`` at ``x0``: exact when ``x0`` is a node, cubic spline otherwise."""
    nodes = np.asarray(nodes)
    i = int(np.argmin(np.abs(nodes - x0)))
    if abs(nodes[i] - x0) <= 1e-12 * max(1.0, abs(x0)):
        return float(np.real(values[i]))
    if not nodes[0] <= x0 <= nodes[-1]:
        raise DomainError(f"x0={x0} is outside the grid [{nodes[0]}, {nodes[-1]}]")
    return float(CubicSpline(nodes, np.real(values))(x0))


def call_payoff(K: float, to_price=np.exp) -> Callable:
    """``(zeta(x) - K)^+`` with ``zeta`` the state-to-price map."""
    return lambda x: np.maximum(to_price(np.asarray(x, float)) - K, 0.0)


def put_payoff(K: float, to_price=np.exp) -> Callable:
    return lambda x: np.maximum(K - to_price(np.asarray(x, float)), 0.0)


def _payoff_vector(payoff, nodes):
    f = payoff(nodes) if callable(payoff) else payoff
    f = np.asarray(f, float) * np.ones(len(nodes))
    if not np.all(np.isfinite(f)):
        raise DomainError("payoff is not finite on the grid")
    return f


@dataclass
class PriceRequest:
    """Down-and-in (or up-and-in) Parisian claim ``e^{-rT} E[1{tau <= T} f(Y_T)]``."""

    payoff: Callable | np.ndarray
    T: float
    r: float
    x0: float
    problem: ParisianProblem

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"maturity must be positive, got T={self.T}")


def european_transform(gen, payoff, q: complex) -> np.ndarray:
    """``(q I - G)^{-1} f``: Laplace transform in maturity of the European value."""
    G = _gmat(gen)
    nodes = gen.nodes if isinstance(gen, Generator) else None
    f = _payoff_vector(payoff, nodes) if callable(payoff) else np.asarray(payoff, float)
    return MaskedOperator(G, np.ones(G.shape[0], bool), q).solve(f)


def european_transforms(G, f, qs) -> np.ndarray:
    """:func:`european_transform` at every ``q`` in ``qs``; shape ``(len(qs), n)``."""
    G = _gmat(G)
    n = G.shape[0]
    out = np.empty((len(qs), n), dtype=complex)
    eye = sp.identity(n, format="csc") if sp.issparse(G) else np.eye(n)
    for j, q in enumerate(qs):
        out[j] = factorize(q * eye - G).solve(f.astype(complex))
    return out


def _solver(gen, prob, exp, route="auto"):
    return ParisianSolver(gen, prob, exp, route)


def parisian_cdf_curve(gen, prob: ParisianProblem, ts: Sequence[float], x0: float,
                       inversion: InversionParams = InversionParams(), exp: ExpSettings = ExpSettings(),
                       all_states: bool = False):
    """``P_x0[tau <= t]`` for every ``t`` in ``ts`` (one transform batch per ``t``)."""
    solver = _solver(gen, prob, exp)
    nodes = _nodes(gen, prob)
    out = []
    for t in np.atleast_1d(ts):
        if not t > 0:
            raise DomainError(f"t must be positive, got {t}")
        lg = inversion.grid(float(t))
        h = solver.h(lg.nodes)
        vals = invert_values((h / lg.nodes[:, None]).T, lg)
        out.append(vals if all_states else value_at(nodes, vals, x0))
    return np.array(out)


def parisian_cdf(gen, prob: ParisianProblem, t: float, x0: float,
                 inversion: InversionParams = InversionParams(), exp: ExpSettings = ExpSettings()) -> float:
    """``P_x0[tau_{L,D} <= t]`` by inverting ``h(q)/q``.

    The raw inverted value is returned; it may leave ``[0, 1]`` by the
    inversion error (about ``1e-6``).
    """
    return float(parisian_cdf_curve(gen, prob, [t], x0, inversion, exp)[0])


def parisian_option_price(gen, req: PriceRequest, inversion: InversionParams = InversionParams(),
                          exp: ExpSettings = ExpSettings(), all_states: bool = False):
    """``e^{-rT} u(T, x0)`` with ``u_hat(q) = H(q) (qI - G)^{-1} f``."""
    G = _gmat(gen)
    nodes = _nodes(gen, req.problem)
    f = _payoff_vector(req.payoff, nodes)
    lg = inversion.grid(req.T)
    W = european_transforms(G, f, lg.nodes)
    Y = _solver(gen, req.problem, exp).apply(lg.nodes, W)
    vals = math.exp(-req.r * req.T) * invert_values(Y.T, lg)
    return vals if all_states else value_at(nodes, vals, req.x0)


@dataclass
class RuinEstimate:
    value: float
    value_refined: float | None = None
    small_q: float | None = None
    horizon: float = math.inf

    @property
    def sensitivity(self) -> float:
        return abs(self.value - self.value_refined) if self.value_refined is not None else 0.0


def ruin_probability(gen, prob: ParisianProblem, horizon: float, x0: float, small_q: float = 1e-8,
                     inversion: InversionParams = InversionParams(), exp: ExpSettings = ExpSettings()) -> RuinEstimate:
    """Parisian ruin probability before ``horizon`` (``math.inf`` for ever).

    The infinite horizon uses ``h(q, x0)`` at a small real ``q`` (final value
    theorem) and also reports the value at ``q / 10``.
    """
    if horizon is None or math.isinf(horizon):
        if not small_q > 0:
            raise DomainError("small_q must be positive")
        solver = _solver(gen, prob, exp)
        nodes = _nodes(gen, prob)
        h = solver.h([small_q, small_q / 10]).real
        return RuinEstimate(value_at(nodes, h[0], x0), value_at(nodes, h[1], x0), small_q)
    return RuinEstimate(parisian_cdf(gen, prob, horizon, x0, inversion, exp), horizon=float(horizon))


def richardson_extrapolate(results: Sequence[tuple[float, float]], order: float = 2.0) -> float:
    """Cancel the ``C delta^order`` term using the last two ``(delta, value)`` pairs."""
    if len(results) < 2:
        raise DomainError("need at least two (delta, value) pairs")
    (d1, v1), (d2, v2) = results[-2], results[-1]
    a, b = d1**order, d2**order
    if a == b:
        raise DomainError("Richardson extrapolation needs distinct step sizes")
    return (a * v2 - b * v1) / (a - b)


# --------------------------------------------------------------------------- #
# Standard option setup on a localized log-price grid
# --------------------------------------------------------------------------- #


@dataclass
class OptionSetup:
    """A single-barrier Parisian option on a model with price map ``zeta``.

    Prices are in asset units; ``S0, K, L`` are converted to chain states with
    ``model.from_price``. The chain lives on ``[x0 - width*S*sqrt(T),
    x0 + width*S*sqrt(T)]`` with ``S`` the model scale, unless ``domain`` is
    given.
    """

    model: ModelSpec
    S0: float = 90.0
    K: float = 95.0
    L: float = 90.0
    D: float = 1 / 12
    T: float = 1.0
    r: float = 0.05
    kind: str = "call"
    side: str = "below"
    width: float = 5.0
    domain: tuple[float, float] | None = None
    inversion: InversionParams = field(default_factory=InversionParams)
    exp: ExpSettings = field(default_factory=ExpSettings)

    def __post_init__(self):
        if self.kind not in ("call", "put"):
            raise DomainError(f"payoff kind must be 'call' or 'put', got {self.kind!r}")
        if not self.T > 0:
            raise DomainError(f"maturity must be positive, got T={self.T}")

    @property
    def x0(self) -> float:
        return float(self.model.from_price(self.S0))

    @property
    def k(self) -> float:
        return float(self.model.from_price(self.K))

    @property
    def l(self) -> float:
        return float(self.model.from_price(self.L))

    def bounds(self) -> tuple[float, float]:
        if self.domain is not None:
            return tuple(self.domain)
        half = self.width * self.model.scale * math.sqrt(self.T)
        return self.x0 - half, self.x0 + half

    def payoff(self):
        zeta = self.model.to_price
        return call_payoff(self.K, zeta) if self.kind == "call" else put_payoff(self.K, zeta)

    def grid(self, n: int, kind: str = "pu") -> Grid:
        lo, hi = self.bounds()
        if kind == "pu":
            return pu_grid_from_budget(lo, hi, self.k, self.l, n)
        if kind == "uniform":
            return uniform_grid(lo, hi, n)
        raise DomainError(f"unknown grid type {kind!r}")

    def build(self, n: int, kind: str = "pu"):
        grid = self.grid(n, kind)
        gen = build_generator(self.model, grid)
        prob = ParisianProblem.from_grid(grid, self.side, self.l, self.D)
        return grid, gen, prob

    def request(self, prob: ParisianProblem) -> PriceRequest:
        return PriceRequest(self.payoff(), self.T, self.r, self.x0, prob)

    def price(self, n: int, kind: str = "pu") -> tuple[float, Grid]:
        grid, gen, prob = self.build(n, kind)
        return parisian_option_price(gen, self.request(prob), self.inversion, self.exp), grid

    def cdf(self, n: int, t: float, kind: str = "pu") -> tuple[float, Grid]:
        grid, gen, prob = self.build(n, kind)
        return parisian_cdf(gen, prob, t, self.x0, self.inversion, self.exp), grid


def two_grid_price_KeqL(setup: OptionSetup, n: int) -> float:
    """Price when the strike equals the barrier.

    The European transform is computed on a grid with ``K`` midway between
    nodes, the Parisian transform on a grid with ``L`` on a node; the first is
    carried to the second by cubic interpolation of its real and imaginary
    parts at every inversion node.
    """
    if not math.isclose(setup.K, setup.L, rel_tol=0, abs_tol=1e-12 * max(1.0, abs(setup.L))):
        raise ParisianError("K != L: use OptionSetup.price / parisian_option_price on a PU grid")
    lo, hi = setup.bounds()
    h = (hi - lo) / n
    kx, lx = setup.k, setup.l
    # grid A: K at a cell midpoint; grid B: L on a node; same spacing
    ia = np.arange(math.ceil((lo - kx) / h - 0.5), math.floor((hi - kx) / h - 0.5) + 1)
    grid_a = Grid(kx + (ia + 0.5) * h, anchors=((kx, "midway"),), kind="uniform")
    ib = np.arange(math.ceil((lo - lx) / h), math.floor((hi - lx) / h) + 1)
    nodes_b = lx + ib * h
    nodes_b[np.argmin(np.abs(ib))] = lx
    grid_b = Grid(nodes_b, anchors=((lx, "on_grid"),), kind="uniform")
    gen_a = build_generator(setup.model, grid_a)
    gen_b = build_generator(setup.model, grid_b)
    prob = ParisianProblem.from_grid(grid_b, setup.side, lx, setup.D)
    lg = setup.inversion.grid(setup.T)
    Wa = european_transforms(gen_a.matrix, _payoff_vector(setup.payoff(), grid_a.nodes), lg.nodes)
    Wb = np.empty((lg.size, grid_b.size), dtype=complex)
    for j in range(lg.size):
        re = CubicSpline(grid_a.nodes, Wa[j].real)(grid_b.nodes)
        im = CubicSpline(grid_a.nodes, Wa[j].imag)(grid_b.nodes)
        Wb[j] = re + 1j * im
    Y = ParisianSolver(gen_b, prob, setup.exp).apply(lg.nodes, Wb)
    vals = math.exp(-setup.r * setup.T) * invert_values(Y.T, lg)
    return value_at(grid_b.nodes, vals, setup.x0)


# --------------------------------------------------------------------------- #
# Convergence studies
# --------------------------------------------------------------------------- #


@dataclass
class ConvergenceRow:
    n: int
    delta_max: float
    value: float
    extrapolated: float | None
    runtime_ms: float
    abs_err: float | None = None


@dataclass
class ConvergenceStudy:
    rows: list[ConvergenceRow]
    reference: float | None
    order: float

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rows])


def fitted_order(deltas, values, reference: float | None = None) -> float:
    """Observed convergence order.

    With a reference value: least-squares slope of ``log|error|`` against
    ``log delta``. Without: median of ``log(|d_i| / |d_{i+1}|) / log(delta_i /
    delta_{i+1})`` over successive differences ``d_i``.
    """
    deltas = np.asarray(deltas, float)
    values = np.asarray(values, float)
    if reference is not None:
        err = np.abs(values - reference)
        keep = err > 0
        if keep.sum() < 2:
            return math.nan
        return float(np.polyfit(np.log(deltas[keep]), np.log(err[keep]), 1)[0])
    d = np.abs(np.diff(values))
    if d.size < 2:
        return math.nan
    ratios = np.log(d[:-1] / d[1:]) / np.log(deltas[1:-1] / deltas[2:])
    return float(np.median(ratios))


def convergence_study(evaluate: Callable[[int], tuple[float, float]], ns: Sequence[int],
                      reference: float | None = None, extrapolate: bool = True, order: float = 2.0) -> ConvergenceStudy:
    """Run ``evaluate(n) -> (value, delta_max)`` over a refinement ladder."""
    rows: list[ConvergenceRow] = []
    for n in ns:
        t0 = time.perf_counter()
        value, delta = evaluate(int(n))
        ms = 1e3 * (time.perf_counter() - t0)
        extra = None
        if extrapolate and rows:
            extra = richardson_extrapolate([(rows[-1].delta_max, rows[-1].value), (delta, value)], order)
        rows.append(ConvergenceRow(int(n), float(delta), float(value), extra, ms,
                                   None if reference is None else abs(value - reference)))
    deltas = [r.delta_max for r in rows]
    vals = [r.value for r in rows]
    return ConvergenceStudy(rows, reference, fitted_order(deltas, vals, reference))
