"""Multi-sided Parisian times, MinParisianHit claims, Parisian bonds and
regime-switching / two-layer stochastic-volatility chains."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy import integrate, optimize

from .errors import DomainError, NumericalError, ParisianError
from .generator import Generator, build_generator
from .grid import Grid
from .laplace import InversionParams, invert_values
from .linalg import MaskedOperator, factorize
from .model import ModelSpec, RegimeModel
from .parisian import ExpSettings, ParisianProblem, ParisianSolver, ParisianTransform, RegionExp, parisian_transform_general
from .pricing import _payoff_vector, european_transforms, value_at

__all__ = [
    "Interval",
    "SetFamily",
    "multi_sided_transform",
    "multi_sided_price",
    "multi_sided_cdf",
    "min_parisian_hit_transform",
    "min_parisian_hit_price",
    "barrier_hit_price",
    "parisian_bond_transform_general",
    "parisian_bond_price",
    "RSGenerator",
    "build_rs_generator",
    "rs_problem",
    "rs_transform_general",
    "rs_parisian_price",
    "SVSpec",
    "sv_two_layer_build",
]


def _gmat(gen):
    return gen.matrix if isinstance(gen, (Generator, RSGenerator)) else gen


def _dense(G):
    return G.toarray() if sp.issparse(G) else np.asarray(G, dtype=float)


def _solve(M, B, what: str):
    try:
        return sla.solve(M, B)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"{what} is singular: {exc}") from None


# --------------------------------------------------------------------------- #
# Multi-sided Parisian stopping times
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Interval:
    """Interval with open or closed ends; ``Interval(hi=L)`` is ``(-inf, L)``."""

    lo: float = -math.inf
    hi: float = math.inf
    lo_closed: bool = False
    hi_closed: bool = False

    def contains(self, x):
        x = np.asarray(x, float)
        left = x >= self.lo if self.lo_closed else x > self.lo
        right = x <= self.hi if self.hi_closed else x < self.hi
        return left & right


@dataclass(frozen=True)
class SetFamily:
    """Disjoint state sets, each a finite union of intervals."""

    sets: tuple[tuple[Interval, ...], ...]

    def __post_init__(self):
        if not self.sets:
            raise DomainError("a set family needs at least one set")
        sets = tuple(tuple(s) if isinstance(s, (list, tuple)) else (s,) for s in self.sets)
        object.__setattr__(self, "sets", sets)

    @classmethod
    def two_sided(cls, lower: float, upper: float) -> "SetFamily":
        """``{(-inf, lower), (upper, inf)}``."""
        if not lower < upper:
            raise DomainError("need lower < upper")
        return cls(((Interval(hi=lower),), (Interval(lo=upper),)))

    def masks(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, float)
        out = np.zeros((len(self.sets), nodes.size), dtype=bool)
        for k, s in enumerate(self.sets):
            for iv in s:
                out[k] |= iv.contains(nodes)
        if np.any(out.sum(axis=0) > 1):
            raise DomainError("sets in a family must be disjoint on the grid")
        return out

    def union_mask(self, nodes) -> np.ndarray:
        return self.masks(nodes).any(axis=0)


def multi_sided_transform(gen, sets: SetFamily, D: float, q: complex, nodes=None,
                          exp: ExpSettings = ExpSettings()) -> ParisianTransform:
    """``H(q)`` of the first time any set's excursion clock reaches ``D``."""
    if not D > 0:
        raise DomainError("D must be positive")
    G = _gmat(gen)
    nodes = gen.nodes if nodes is None else nodes
    n = G.shape[0]
    masks = sets.masks(nodes)
    B = masks.any(axis=0)
    disc = np.exp(-q * D)
    M = np.eye(n, dtype=complex)
    rhs = np.zeros((n, n))
    for IA in masks:
        idx = np.flatnonzero(IA)
        if idx.size == 0:
            continue
        VA = np.zeros((n, n))
        VA[np.ix_(idx, idx)] = RegionExp(G, IA, D, exp).matrix()
        U1 = MaskedOperator(G, IA, q).solve(np.diag((~IA).astype(float)))
        UA = U1 - disc * (VA @ U1)
        M -= IA[:, None] * UA
        rhs += IA[:, None] * VA
    if (~B).any():
        Up = MaskedOperator(G, ~B, q).solve(np.diag(B.astype(float)))
        M -= (~B)[:, None] * Up
    H = disc * _solve(M, rhs, "I - sum I_A U_A - (I - I_B) U^+")
    return ParisianTransform(q, H.sum(axis=1), H)


def multi_sided_price(gen, sets: SetFamily, D: float, payoff, T: float, r: float, x0: float,
                      inversion: InversionParams = InversionParams(), exp: ExpSettings = ExpSettings(),
                      nodes=None) -> float:
    """``e^{-rT} E_x0[1{tau_A <= T} f(Y_T)]``."""
    G = _gmat(gen)
    nodes = gen.nodes if nodes is None else nodes
    f = _payoff_vector(payoff, nodes)
    lg = inversion.grid(T)
    W = european_transforms(G, f, lg.nodes)
    vals = np.stack([multi_sided_transform(G, sets, D, q, nodes, exp).H @ w for q, w in zip(lg.nodes, W)])
    return math.exp(-r * T) * value_at(nodes, invert_values(vals.T, lg), x0)


def multi_sided_cdf(gen, sets: SetFamily, D: float, t: float, x0: float,
                    inversion: InversionParams = InversionParams(), exp: ExpSettings = ExpSettings(),
                    nodes=None) -> float:
    G = _gmat(gen)
    nodes = gen.nodes if nodes is None else nodes
    lg = inversion.grid(t)
    vals = np.stack([multi_sided_transform(G, sets, D, q, nodes, exp).h / q for q in lg.nodes])
    return value_at(nodes, invert_values(vals.T, lg), x0)


# --------------------------------------------------------------------------- #
# MinParisianHit: excursion above L reaching D, or first passage to [B, inf)
# --------------------------------------------------------------------------- #


def min_parisian_hit_transform(gen, L: float, D: float, B: float, q: complex, nodes=None,
                               exp: ExpSettings = ExpSettings(), strict_level: bool = True) -> np.ndarray:
    """``H1(q)[x, y] = E_x[e^{-q tau} 1{Y_tau = y}]`` for ``tau = tau^+_{L,D} ^ tau^+_B``.

    The excursion clock runs on ``x > L`` and resets on ``x <= L``; ``x >= B``
    triggers immediately. ``strict_level=False`` counts ``x = L`` as part of
    the excursion (clock on ``x >= L``, reset on ``x < L``). From ``L < x < B``
    the chain either survives ``D`` inside ``(L, B)``, reaches ``[B, inf)``
    first (before ``D``), or falls to ``x <= L`` first (before ``D``) and
    restarts; from ``x <= L`` it restarts on
    entering ``(L, inf)``. With ``H1 = V + U H1``:

        V = I_B + I_LB (V1 - V2) + e^{-qD} I_LB W
        U = I_LB (U1 - U2) + I_L^- Ubar
    """
    if not L < B:
        raise DomainError(f"need L < B, got L={L}, B={B}")
    G = _gmat(gen)
    nodes = np.asarray(gen.nodes if nodes is None else nodes, float)
    n = G.shape[0]
    tol = 1e-12 * max(1.0, abs(L))
    above_L = nodes > L + tol if strict_level else nodes >= L - tol
    at_B = nodes >= B - 1e-12 * max(1.0, abs(B))
    LB = above_L & ~at_B
    below = ~above_L
    disc = np.exp(-q * D)
    V = np.diag(at_B.astype(complex))
    U = np.zeros((n, n), dtype=complex)
    idx = np.flatnonzero(LB)
    if idx.size:
        W = np.zeros((n, n))
        W[np.ix_(idx, idx)] = RegionExp(G, LB, D, exp).matrix()
        op = MaskedOperator(G, LB, q)
        V1 = op.solve(np.diag(at_B.astype(float)))
        U1 = op.solve(np.diag(below.astype(float)))
        V += LB[:, None] * (V1 - disc * (W @ V1) + disc * W)
        U += LB[:, None] * (U1 - disc * (W @ U1))
    if below.any():
        Ubar = MaskedOperator(G, below, q).solve(np.diag(above_L.astype(float)))
        U += below[:, None] * Ubar
    return _solve(np.eye(n) - U, V, "I - U(q) (MinParisianHit)")


def min_parisian_hit_price(gen, L: float, D: float, B: float, payoff, T: float, r: float, x0: float,
                           inversion: InversionParams = InversionParams(), exp: ExpSettings = ExpSettings(),
                           nodes=None, strict_level: bool = True) -> float:
    """``e^{-rT} E_x0[1{tau^+_{L,D} ^ tau^+_B <= T} f(Y_T)]`` via ``H1(q + r)``."""
    G = _gmat(gen)
    nodes = gen.nodes if nodes is None else nodes
    f = _payoff_vector(payoff, nodes)
    lg = inversion.grid(T)
    shifted = lg.nodes + r
    W = european_transforms(G, f, shifted)
    vals = np.stack([min_parisian_hit_transform(G, L, D, B, s, nodes, exp, strict_level) @ w for s, w in zip(shifted, W)])
    return value_at(nodes, invert_values(vals.T, lg), x0)


def barrier_hit_price(gen, B: float, payoff, T: float, r: float, x0: float,
                      inversion: InversionParams = InversionParams(), nodes=None) -> float:
    """Knock-in at the first passage to ``[B, inf)``: ``e^{-rT} E[1{tau_B <= T} f(Y_T)]``."""
    G = _gmat(gen)
    nodes = np.asarray(gen.nodes if nodes is None else nodes, float)
    at_B = nodes >= B - 1e-12 * max(1.0, abs(B))
    f = _payoff_vector(payoff, nodes)
    lg = inversion.grid(T)
    shifted = lg.nodes + r
    W = european_transforms(G, f, shifted)
    vals = np.stack([MaskedOperator(G, ~at_B, s).solve(np.diag(at_B.astype(float))) @ w
                     for s, w in zip(shifted, W)])
    return value_at(nodes, invert_values(vals.T, lg), x0)


# --------------------------------------------------------------------------- #
# Parisian bonds
# --------------------------------------------------------------------------- #


def _killed(G, rates):
    if sp.issparse(G):
        return (sp.csr_matrix(G) - sp.diags(rates)).tocsr()
    return np.asarray(G) - np.diag(rates)


def parisian_bond_transform_general(gen, L: float, D: float, payoff, q: complex, nodes=None,
                                    rate=None, exp: ExpSettings = ExpSettings()) -> np.ndarray:
    """``h(q) = E_x[exp(-int_0^tau (q + R_t) dt) f(R_tau)]`` from the dense block formulas.

    ``tau`` is the first time an excursion of the short rate above ``L`` lasts
    ``D``. ``R_q = diag(q + rate(x))`` replaces ``q I`` everywhere.
    """
    G = _dense(_gmat(gen))
    nodes = np.asarray(gen.nodes if nodes is None else nodes, float)
    n = G.shape[0]
    rates = nodes if rate is None else np.asarray(rate(nodes), float)
    f = _payoff_vector(payoff, nodes)
    up = nodes > L + 1e-12 * max(1.0, abs(L))
    dn = ~up
    Iu = np.diag(up.astype(float))
    Id = np.diag(dn.astype(float))
    Gq = G - np.diag(q + rates)
    E = sla.expm(Iu @ Gq * D) if exp.method == "exact" else _exp_rational(Iu @ Gq, D, exp)
    v = E @ Iu @ f
    U1 = _solve(Id - Iu @ Gq, Id, "bond U1^-")
    U2 = E @ Iu @ U1
    Um = U1 - U2
    Up = _solve(Iu - Id @ Gq, Iu, "bond U^+")
    M = np.eye(n) - Iu @ Um @ Id - Id @ Up @ Iu
    return _solve(M, v, "bond renewal system")


def _exp_rational(A, D, exp):
    from .linalg import ExpAction
    return ExpAction(A, D, exp.m, exp.extrapolation, exp.levels).apply(np.eye(A.shape[0], dtype=complex))


def parisian_bond_price(rate_gen, L: float, D: float, payoff, T: float, x0: float,
                        inversion: InversionParams = InversionParams(), exp: ExpSettings = ExpSettings(),
                        rate=None, nodes=None, all_states: bool = False):
    """``P(T, x0) = E[exp(-int_0^tau R) f(R_tau) 1{tau < T}]`` by inverting ``h(q)/q``.

    Equivalent to the single-sided "above" transform of the killed generator
    ``G - diag(rate)``, which keeps the batched solver available.
    """
    G = _gmat(rate_gen)
    nodes = np.asarray(rate_gen.nodes if nodes is None else nodes, float)
    rates = nodes if rate is None else np.asarray(rate(nodes), float)
    if np.any(rates < 0):
        lg = inversion.grid(T)
        if np.any(lg.nodes.real[0] + rates <= 0):
            raise DomainError("Re(q) + rate must stay positive at every inversion node")
    f = _payoff_vector(payoff, nodes)
    prob = ParisianProblem("above", float(L), float(D), nodes)
    solver = ParisianSolver(_killed(G, rates), prob, exp)
    lg = inversion.grid(T)
    h = solver.apply(lg.nodes, f)
    vals = invert_values((h / lg.nodes[:, None]).T, lg)
    return vals if all_states else value_at(nodes, vals, x0)


# --------------------------------------------------------------------------- #
# Regime switching
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class RSGenerator:
    """Generator of ``(X, v)`` on ``S_X x S_v`` in regime-major order.

    ``matrix = diag(G_1, ..., G_m) + Lambda kron I``; ``zeta`` holds the asset
    price ``zeta(x, v)`` of every state, shape ``(m * n,)``.
    """

    matrix: sp.csr_matrix | np.ndarray
    n_regimes: int
    n: int
    x_nodes: np.ndarray
    zeta: np.ndarray
    regime_generator: np.ndarray
    blocks: tuple = field(default=(), repr=False)

    @property
    def size(self) -> int:
        return self.n_regimes * self.n

    @property
    def nodes(self) -> np.ndarray:
        return self.zeta

    @property
    def structure(self) -> str:
        return "banded" if sp.issparse(self.matrix) else "dense"

    def index(self, x: float, regime: int) -> int:
        i = int(np.argmin(np.abs(self.x_nodes - x)))
        if abs(self.x_nodes[i] - x) > 1e-10 * max(1.0, abs(x)):
            raise DomainError(f"x0={x} is not a node of the x grid")
        if not 0 <= regime < self.n_regimes:
            raise DomainError(f"regime {regime} out of range")
        return regime * self.n + i

    def dense(self) -> np.ndarray:
        return _dense(self.matrix)

    def matvec(self, v):
        return self.matrix @ v

    def regime_slice(self, regime: int) -> slice:
        return slice(regime * self.n, (regime + 1) * self.n)


def _assemble_rs(blocks, lam, x_nodes, zeta) -> RSGenerator:
    lam = np.asarray(lam, float)
    m = lam.shape[0]
    n = blocks[0].shape[0]
    if len(blocks) != m:
        raise DomainError("one generator per regime is required")
    if all(sp.issparse(b) for b in blocks):
        mat = (sp.block_diag(blocks, format="csr") + sp.kron(sp.csr_matrix(lam), sp.identity(n), format="csr")).tocsr()
    else:
        mat = sla.block_diag(*[_dense(b) for b in blocks]) + np.kron(lam, np.eye(n))
    return RSGenerator(mat, m, n, np.asarray(x_nodes, float), np.asarray(zeta, float), lam, tuple(blocks))


def build_rs_generator(model: RegimeModel, grid: Grid, zeta: Callable | None = None) -> RSGenerator:
    """Regime-switching chain from per-regime models on a shared ``x`` grid."""
    blocks = [build_generator(m, grid).matrix for m in model.regimes]
    if zeta is None:
        z = np.concatenate([m.to_price(grid.nodes) for m in model.regimes])
    else:
        z = np.concatenate([np.asarray(zeta(grid.nodes, k), float) for k in range(model.n_regimes)])
    return _assemble_rs(blocks, model.regime_generator, grid.nodes, z)


def rs_problem(rs: RSGenerator, L: float, D: float, side: str = "below") -> ParisianProblem:
    """Single-sided problem with masks from ``zeta(x, v)`` against the price level ``L``."""
    return ParisianProblem(side, float(L), float(D), rs.zeta)


def rs_transform_general(rs: RSGenerator, L: float, D: float, q: complex,
                         exp: ExpSettings = ExpSettings()) -> ParisianTransform:
    """Dense ``H(q) = e^{-qD} (I - U(q))^{-1} V`` with the mask-prefixed blocks.

    ``U = I^-(q I^- - I^- G + I^+)^{-1} I^+ - I^- e^{-qD} exp(I^- G D) I^- U1
    + I^+ (q I^+ - I^+ G + I^-)^{-1} I^-`` over ``zeta(x, v) < L``.
    """
    G = rs.dense()
    N = G.shape[0]
    prob = rs_problem(rs, L, D)
    lo = prob.lower.astype(float)
    hi = 1.0 - lo
    Im, Ip = np.diag(lo), np.diag(hi)
    V = np.zeros((N, N))
    idx = np.flatnonzero(prob.lower)
    if idx.size:
        V[np.ix_(idx, idx)] = RegionExp(G, prob.lower, D, exp).matrix()
    U1 = Im @ _solve(q * Im - Im @ G + Ip, Ip, "RS U1")
    U2 = np.exp(-q * D) * (Im @ V @ Im @ U1)
    Um = Ip @ _solve(q * Ip - Ip @ G + Im, Im, "RS U^-")
    U = U1 - U2 + Um
    H = np.exp(-q * D) * _solve(np.eye(N) - U, V, "RS I - U(q)")
    return ParisianTransform(q, H.sum(axis=1), H)


def rs_parisian_price(rs: RSGenerator, L: float, D: float, payoff, T: float, r: float, start: tuple[float, int],
                      inversion: InversionParams = InversionParams(), exp: ExpSettings = ExpSettings(),
                      side: str = "below", all_states: bool = False):
    """``e^{-rT} E_{x0, v0}[1{tau <= T} f(X_T, v_T)]``.

    ``payoff`` is a function of the asset price ``zeta`` (or a vector over all
    ``m * n`` states); ``start = (x0, regime index)`` with ``x0`` on the ``x``
    grid.
    """
    f = _payoff_vector(payoff, rs.zeta)
    prob = rs_problem(rs, L, D, side)
    lg = inversion.grid(T)
    W = european_transforms(rs.matrix, f, lg.nodes)
    Y = ParisianSolver(rs.matrix, prob, exp).apply(lg.nodes, W)
    vals = math.exp(-r * T) * invert_values(Y.T, lg)
    if all_states:
        return vals
    return float(vals[rs.index(*start)])


# --------------------------------------------------------------------------- #
# Two-layer stochastic volatility
# --------------------------------------------------------------------------- #


@dataclass
class SVSpec:
    """``dS = omega(S, v) dt + m(v) Gamma(S) dW1``, ``dv = mu(v) dt + sigma(v) dW2``, ``d<W1, W2> = rho dt``.

    ``s_ref`` and ``v_ref`` are the lower limits of ``g = int 1/Gamma`` and
    ``f = int m/sigma``.
    """

    omega: Callable
    m: Callable
    Gamma: Callable
    mu: Callable
    sigma: Callable
    rho: float = 0.0
    s_ref: float = 1.0
    v_ref: float = 0.0


def _num_diff(fun, x, h=None):
    x = np.asarray(x, float)
    h = 1e-6 * np.maximum(1.0, np.abs(x)) if h is None else h
    return (np.asarray(fun(x + h), float) - np.asarray(fun(x - h), float)) / (2 * h)


def _quad(fun, a, b):
    val, err = integrate.quad(fun, a, b, epsabs=1e-13, epsrel=1e-11, limit=200)
    if not np.isfinite(val):
        raise NumericalError(f"quadrature failed on [{a}, {b}]")
    return val


def _variance_chain(spec: SVSpec, v_nodes) -> np.ndarray:
    """Birth-and-death rates for ``v`` on ``v_nodes`` with reflecting ends."""
    v = np.asarray(v_nodes, float)
    k = v.size
    lam = np.zeros((k, k))
    if k == 1:
        return lam
    for i in range(k):
        mu = float(spec.mu(v[i]))
        s2 = float(spec.sigma(v[i])) ** 2
        if 0 < i < k - 1:
            dp, dm = v[i + 1] - v[i], v[i] - v[i - 1]
            dd = 0.5 * (dp + dm)
            up = (mu * dm + s2) / (2 * dp * dd)
            down = (-mu * dp + s2) / (2 * dm * dd)
            if up < 0 or down < 0:
                up = max(mu, 0) / dp + s2 / (2 * dp * dd)
                down = max(-mu, 0) / dm + s2 / (2 * dm * dd)
            lam[i, i + 1], lam[i, i - 1] = up, down
        elif i == 0:
            d = v[1] - v[0]
            lam[0, 1] = max(mu, 0) / d + s2 / (2 * d * d)
        else:
            d = v[-1] - v[-2]
            lam[-1, -2] = max(-mu, 0) / d + s2 / (2 * d * d)
    lam -= np.diag(lam.sum(axis=1))
    return lam


def sv_two_layer_build(spec: SVSpec, v_nodes, x_grid: Grid, regime_generator=None) -> RSGenerator:
    """Regime-switching chain for a stochastic-volatility model.

    ``X = g(S) - rho f(v)`` has drift ``theta(x, v)`` and volatility
    ``sqrt(1 - rho^2) m(v)``; the variance layer is a birth-and-death chain on
    ``v_nodes`` (or ``regime_generator`` when given).
    """
    rho = float(spec.rho)
    if abs(rho) > 1:
        raise DomainError("|rho| must be <= 1")
    v_nodes = np.atleast_1d(np.asarray(v_nodes, float))
    if np.any(np.asarray([spec.sigma(v) for v in v_nodes], float) <= 0):
        raise DomainError("sigma(v) must be positive on the variance grid")

    def g(s):
        return _quad(lambda u: 1.0 / spec.Gamma(u), spec.s_ref, s)

    def f(v):
        return _quad(lambda u: spec.m(u) / spec.sigma(u), spec.v_ref, v)

    def g_inv(y):
        # g is increasing; bracket around s_ref geometrically
        lo, hi = spec.s_ref, spec.s_ref
        for _ in range(200):
            if g(lo) <= y:
                break
            lo *= 0.5
        for _ in range(200):
            if g(hi) >= y:
                break
            hi *= 2.0
        if not (g(lo) <= y <= g(hi)):
            raise NumericalError(f"cannot invert g at {y}")
        if lo == hi:
            return lo
        return optimize.brentq(lambda s: g(s) - y, lo, hi, xtol=1e-14, rtol=1e-13)

    def hfun(v):
        mv, sv = float(spec.m(v)), float(spec.sigma(v))
        dm = float(_num_diff(spec.m, v))
        ds = float(_num_diff(spec.sigma, v))
        return float(spec.mu(v)) * mv / sv + 0.5 * (sv * dm - ds * mv)

    x = x_grid.nodes
    blocks, zetas = [], []
    for v in v_nodes:
        shift = rho * f(v) if rho else 0.0
        z = np.array([g_inv(xi + shift) for xi in x])
        if not np.all(np.isfinite(z)) or np.any(np.diff(z) <= 0):
            raise NumericalError("zeta(x, v) is not increasing in x")
        zeta_fn = (lambda zz: (lambda xx: np.interp(xx, x, zz)))(z)
        mv = float(spec.m(v))
        hv = hfun(v) if rho else 0.0

        def theta(xx, v=v, zeta_fn=zeta_fn, mv=mv, hv=hv):
            s = zeta_fn(np.asarray(xx, float))
            return (np.asarray(spec.omega(s, v), float) / np.asarray(spec.Gamma(s), float)
                    - 0.5 * _num_diff(spec.Gamma, s) * mv**2 - rho * hv)

        vol = math.sqrt(1 - rho**2) * mv
        model = ModelSpec(drift=theta, vol=(lambda xx, vol=vol: np.full(np.shape(xx), vol)), name="SV-layer")
        blocks.append(build_generator(model, x_grid).matrix)
        zetas.append(z)
    lam = _variance_chain(spec, v_nodes) if regime_generator is None else np.asarray(regime_generator, float)
    return _assemble_rs(blocks, lam, x, np.concatenate(zetas))
