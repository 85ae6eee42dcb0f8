"""Euler-summation Fourier-series inversion of Laplace transforms.

For a transform ``g_hat`` the value ``g(t)`` is approximated by

    e^{A/2}/(2t) Re g_hat(A/2t)
      + e^{A/2}/t sum_{j=1}^{k1+k2} (-1)^j w_j Re g_hat((A + 2 j pi i)/(2t))

where ``w_j = sum_{l=max(0, j-k2)}^{k1} C(k1, l) 2^{-k1}`` is the binomial
average of the partial sums ``s_{k2}, ..., s_{k2+k1}``. The discretization
(aliasing) error is about ``e^{-A}`` times the size of ``g``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from .errors import DomainError, NumericalError

__all__ = ["LaplaceGrid", "InversionParams", "build_nodes", "invert", "invert_values", "aliasing_error_constant"]


@dataclass(frozen=True)
class LaplaceGrid:
    """Nodes ``q_j`` and full weights (prefactors included) for time ``t``."""

    t: float
    A: float
    k1: int
    k2: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.size


def build_nodes(t: float, A: float = 15.0, k1: int = 20, k2: int = 20) -> LaplaceGrid:
    if not t > 0:
        raise DomainError(f"inversion time must be positive, got t={t}")
    if not A > 0:
        raise DomainError(f"A must be positive, got {A}")
    if k1 < 0 or k2 < 0:
        raise DomainError("k1 and k2 must be nonnegative")
    nterms = k1 + k2
    j = np.arange(nterms + 1)
    nodes = (A + 2j * np.pi * j) / (2 * t)
    lo = np.maximum(0, j[1:] - k2)
    binom = comb(k1, np.arange(k1 + 1)) / 2.0**k1
    tail = np.concatenate([np.cumsum(binom[::-1])[::-1], [0.0]])  # tail[l] = sum_{i>=l} binom[i]
    avg = tail[lo]
    pref = np.exp(A / 2) / t
    weights = np.concatenate([[pref / 2], pref * (-1.0) ** j[1:] * avg])
    return LaplaceGrid(float(t), float(A), int(k1), int(k2), nodes, weights)


def invert_values(values, grid: LaplaceGrid) -> np.ndarray:
    """Combine transform values at the grid nodes (last axis indexes nodes).

    Summation order is fixed, so results are reproducible bitwise.
    """
    values = np.asarray(values)
    if values.shape[-1] != grid.size:
        raise ValueError(f"expected {grid.size} node values, got {values.shape[-1]}")
    bad = ~np.isfinite(values)
    if np.any(bad):
        j = int(np.flatnonzero(bad.reshape(-1, grid.size).any(axis=0))[0])
        raise NumericalError(f"transform not finite at inversion node {j} (q={grid.nodes[j]:.6g})")
    return np.real(values) @ grid.weights


def invert(transform, grid: LaplaceGrid):
    """Invert a scalar (or array-valued) transform ``q -> g_hat(q)`` at ``grid.t``."""
    vals = []
    for j, q in enumerate(grid.nodes):
        try:
            vals.append(np.asarray(transform(q)))
        except Exception as exc:
            raise NumericalError(f"transform evaluation failed at inversion node {j} (q={q:.6g}): {exc}") from exc
    return invert_values(np.stack(vals, axis=-1), grid)


def aliasing_error_constant(A: float) -> float:
    """Aliasing error of the method for ``g == 1``: ``sum_k e^{-kA}``."""
    return float(np.exp(-A) / (1 - np.exp(-A)))


@dataclass(frozen=True)
class InversionParams:
    """``A, k1, k2`` bundle; ``grid(t)`` builds the nodes for time ``t``."""

    A: float = 15.0
    k1: int = 20
    k2: int = 20

    def grid(self, t: float) -> LaplaceGrid:
        return build_nodes(t, self.A, self.k1, self.k2)
