"""Exact event-driven simulation of a finite CTMC with excursion clocks.

Paths are piecewise constant, so the Parisian time is exact per path: while
the chain sits in a clocked state, the clock fires at ``start + D`` if that
falls inside the holding interval. The oracle simulates the chain itself, so
it checks the transform machinery without any discretization bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .errors import DomainError
from .parisian import ParisianProblem

__all__ = [
    "PathEstimate",
    "CDF",
    "Payoff",
    "JointMinHit",
    "Bond",
    "clock_labels",
    "simulate_parisian",
    "simulate_states",
    "CHUNK",
]

CHUNK = 1 << 14
_NO_CLOCK = 0


@dataclass(frozen=True)
class PathEstimate:
    """Sample mean with standard error ``std / sqrt(paths)``."""

    mean: float
    se: float
    paths: int
    seed: int
    degenerate: bool = False
    truncated: int = 0

    def within(self, value: float, k: float = 3.0) -> bool:
        """``|mean - value| <= k se`` (exact equality required when ``se == 0``)."""
        return abs(self.mean - value) <= k * self.se + 1e-12


@dataclass(frozen=True)
class CDF:
    """``1{tau <= t}``; ``t = inf`` estimates ``P(tau < inf)`` up to ``max_time``."""

    t: float
    max_time: float = 1e3


@dataclass(frozen=True)
class Payoff:
    """``e^{-rT} f(X_T) 1{tau <= T}``."""

    f: Callable | np.ndarray
    T: float
    r: float = 0.0


@dataclass(frozen=True)
class JointMinHit:
    """``e^{-rT} f(X_T) 1{min(tau, tau_B) <= T}`` with ``tau_B`` the entry time to ``x >= B``."""

    B: float
    f: Callable | np.ndarray
    T: float
    r: float = 0.0


@dataclass(frozen=True)
class Bond:
    """``exp(-int_0^tau rate(X_s) ds) f(X_tau) 1{tau < T}``; ``rate`` defaults to the state value."""

    f: Callable | np.ndarray
    T: float
    rate: Callable | np.ndarray | None = None


Functional = Union[CDF, Payoff, JointMinHit, Bond]


def clock_labels(prob_or_labels, n: int) -> tuple[np.ndarray, float]:
    """Integer label per state (0: no clock) and the window ``D``.

    A ``ParisianProblem`` gives one clocked region; a ``(labels, D)`` pair
    supports several disjoint regions, each with its own clock.
    """
    if isinstance(prob_or_labels, ParisianProblem):
        return prob_or_labels.inside.astype(np.int64), float(prob_or_labels.D)
    labels, D = prob_or_labels
    labels = np.asarray(labels, np.int64)
    if labels.shape != (n,):
        raise DomainError(f"expected {n} labels, got shape {labels.shape}")
    return labels, float(D)


def _vec(f, nodes):
    v = f(nodes) if callable(f) else f
    return np.asarray(v, float) * np.ones(len(nodes))


class _Chain:
    """Holding rates and a flat cumulative jump table for vectorized sampling."""

    def __init__(self, G):
        A = sp.csr_matrix(G, dtype=float)
        A.setdiag(0.0)
        A.eliminate_zeros()
        if A.nnz and A.data.min() < 0:
            raise DomainError("negative off-diagonal rate")
        self.n = A.shape[0]
        self.rate = np.asarray(A.sum(axis=1)).ravel()
        self.cols = A.indices.copy()
        self.indptr = A.indptr.copy()
        # row i's cumulative probabilities live in (i, i + 1]
        row = np.repeat(np.arange(self.n), np.diff(A.indptr))
        cum = np.zeros(A.nnz)
        for i in range(self.n):
            a, b = A.indptr[i], A.indptr[i + 1]
            if b > a:
                c = np.cumsum(A.data[a:b]) / self.rate[i]
                c[-1] = 1.0
                cum[a:b] = c
        self.key = row + cum

    def holding(self, rng, states):
        r = self.rate[states]
        with np.errstate(divide="ignore"):
            return np.where(r > 0, rng.standard_exponential(states.size) / np.where(r > 0, r, 1.0), np.inf)

    def jump(self, rng, states):
        u = rng.random(states.size)
        pos = np.searchsorted(self.key, states + np.maximum(u, 1e-300), side="left")
        pos = np.minimum(pos, self.indptr[states + 1] - 1)
        return self.cols[pos]


def _start_index(nodes, x0) -> int:
    if isinstance(x0, (int, np.integer)):
        if not 0 <= x0 < len(nodes):
            raise DomainError(f"start index {x0} out of range")
        return int(x0)
    i = int(np.argmin(np.abs(nodes - x0)))
    if abs(nodes[i] - x0) > 1e-10 * max(1.0, abs(x0)):
        raise DomainError(f"x0={x0} is not a chain state; pass a node or an integer index")
    return i


def _run_chunk(chain: _Chain, labels, D, trigger, horizon, continue_after, rate, rng, start, m):
    """Simulate ``m`` paths; returns (tau, state at stop, state at horizon, int rate)."""
    state = np.full(m, start, dtype=np.int64)
    t = np.zeros(m)
    s = np.zeros(m)  # current excursion start
    tau = np.full(m, np.inf)
    integral = np.zeros(m)
    x_tau = np.full(m, -1, dtype=np.int64)
    if trigger is not None and trigger[start]:
        tau[:] = 0.0
        x_tau[:] = start
    active = np.arange(m) if not np.isfinite(tau[0]) or continue_after else np.empty(0, np.int64)
    while active.size:
        st = state[active]
        h = chain.holding(rng, st)
        t0 = t[active]
        end = np.minimum(t0 + h, horizon)
        clocked = (labels[st] != _NO_CLOCK) & ~np.isfinite(tau[active])
        fire = clocked & (s[active] + D <= end)
        if rate is not None:
            upto = np.where(fire, s[active] + D, end)
            live = ~np.isfinite(tau[active])
            integral[active] += np.where(live, rate[st] * (upto - t0), 0.0)
        if fire.any():
            idx = active[fire]
            tau[idx] = s[idx] + D
            x_tau[idx] = state[idx]
        done = (t0 + h >= horizon) | (fire & (not continue_after))
        move = ~done
        mv = active[move]
        t[mv] = t0[move] + h[move]
        new = chain.jump(rng, st[move])
        reset = (labels[new] != labels[st[move]]) | (labels[new] == _NO_CLOCK)
        s[mv] = np.where(reset, t[mv], s[mv])
        state[mv] = new
        if trigger is not None:
            hit = trigger[new] & ~np.isfinite(tau[mv])
            if hit.any():
                idx = mv[hit]
                tau[idx] = t[idx]
                x_tau[idx] = state[idx]
                if not continue_after:
                    move[np.flatnonzero(move)[hit]] = False
        active = active[move]
    return tau, x_tau, state, integral


def simulate_parisian(gen, prob, functional: Functional, x0, paths: int = 100_000, seed: int = 0,
                      nodes=None) -> PathEstimate:
    """Monte Carlo estimate of a Parisian functional of the chain started at ``x0``.

    ``prob`` is a ``ParisianProblem`` or a ``(labels, D)`` pair (multi-set
    clocks). ``x0`` is a chain state value or an integer state index. Paths
    are split into fixed chunks with independent spawned streams, so the
    estimate is bitwise reproducible for a given seed.
    """
    if paths < 100:
        raise DomainError("paths must be >= 100")
    G = gen.matrix if hasattr(gen, "matrix") else gen
    nodes = np.asarray(gen.nodes if nodes is None else nodes, float)
    n = G.shape[0]
    labels, D = clock_labels(prob, n)
    if not D > 0:
        raise DomainError("D must be positive")
    chain = _Chain(G)
    start = _start_index(nodes, x0)

    trigger = None
    rate = None
    continue_after = False
    if isinstance(functional, CDF):
        if not functional.t >= 0:
            raise DomainError("t must be nonnegative")
        horizon = functional.t if np.isfinite(functional.t) else functional.max_time
    elif isinstance(functional, (Payoff, JointMinHit)):
        horizon = functional.T
        continue_after = True
        if isinstance(functional, JointMinHit):
            trigger = nodes >= functional.B - 1e-12 * max(1.0, abs(functional.B))
    elif isinstance(functional, Bond):
        horizon = functional.T
        rate = nodes.copy() if functional.rate is None else _vec(functional.rate, nodes)
    else:
        raise DomainError(f"unknown functional {functional!r}")
    if not horizon > 0:
        raise DomainError("horizon must be positive")

    degenerate = chain.rate[start] == 0 and (labels[start] == _NO_CLOCK)
    streams = np.random.SeedSequence(seed).spawn(math.ceil(paths / CHUNK))
    values = []
    truncated = 0
    for k, ss in enumerate(streams):
        m = min(CHUNK, paths - k * CHUNK)
        rng = np.random.default_rng(ss)
        tau, x_tau, x_end, integral = _run_chunk(chain, labels, D, trigger, horizon, continue_after, rate, rng, start, m)
        if isinstance(functional, CDF):
            v = (np.isfinite(tau) & (tau <= functional.t)).astype(float)
            if not np.isfinite(functional.t):
                # unresolved paths still moving at max_time
                truncated += int(np.sum(~np.isfinite(tau) & (chain.rate[x_end] > 0)))
        elif isinstance(functional, Bond):
            f = _vec(functional.f, nodes)
            hit = tau < functional.T
            v = np.where(hit, np.exp(-integral) * f[np.maximum(x_tau, 0)], 0.0)
        else:
            f = _vec(functional.f, nodes)
            v = math.exp(-functional.r * functional.T) * np.where(tau <= functional.T, f[x_end], 0.0)
        values.append(v)
    v = np.concatenate(values)
    se = float(v.std(ddof=1) / math.sqrt(v.size))
    return PathEstimate(float(v.mean()), se, int(paths), int(seed), bool(degenerate), truncated)


def simulate_states(gen, x0, t: float, paths: int = 100_000, seed: int = 0, nodes=None) -> np.ndarray:
    """Chain states at time ``t`` for ``paths`` paths (no clock)."""
    G = gen.matrix if hasattr(gen, "matrix") else gen
    nodes = np.asarray(gen.nodes if nodes is None else nodes, float)
    chain = _Chain(G)
    start = _start_index(nodes, x0)
    labels = np.zeros(G.shape[0], np.int64)
    out = []
    for k, ss in enumerate(np.random.SeedSequence(seed).spawn(math.ceil(paths / CHUNK))):
        m = min(CHUNK, paths - k * CHUNK)
        _, _, x_end, _ = _run_chunk(chain, labels, 1.0, None, t, False, None, np.random.default_rng(ss), start, m)
        out.append(x_end)
    return np.concatenate(out)
