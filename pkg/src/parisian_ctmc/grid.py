"""State grids for the Markov chain approximation.

Second-order convergence needs the Parisian barrier on the grid and every payoff
discontinuity (the strike) exactly halfway between two nodes. The piecewise
uniform construction below does both with three uniform blocks.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "Grid",
    "uniform_grid",
    "piecewise_uniform_grid",
    "pu_grid_from_budget",
    "split_budget",
]

ANCHOR_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Strictly increasing chain states ``y_0 < ... < y_n`` with anchor bookkeeping.

    ``anchors`` holds ``(value, kind)`` pairs, ``kind`` being ``"on_grid"`` or
    ``"midway"``.
    """

    nodes: np.ndarray
    anchors: tuple[tuple[float, str], ...] = ()
    ratio_bound: float = np.inf
    kind: str = "custom"
    blocks: tuple[int, ...] = field(default=())

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise DomainError("a grid needs at least 3 nodes")
        if np.any(np.diff(nodes) <= 0):
            raise DomainError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    # basic geometry -------------------------------------------------------
    @property
    def n(self) -> int:
        """Index of the last node (the grid has ``n + 1`` states)."""
        return self.nodes.size - 1

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def steps(self) -> np.ndarray:
        """``delta^+ y_i = y_{i+1} - y_i`` for ``i < n``."""
        return np.diff(self.nodes)

    @property
    def step_plus(self) -> np.ndarray:
        return self.nodes[2:] - self.nodes[1:-1]

    @property
    def step_minus(self) -> np.ndarray:
        return self.nodes[1:-1] - self.nodes[:-2]

    @property
    def step_mean(self) -> np.ndarray:
        return 0.5 * (self.step_plus + self.step_minus)

    @property
    def delta_max(self) -> float:
        return float(self.steps.max())

    @property
    def step_ratio(self) -> float:
        s = self.steps
        return float(s.max() / s.min())

    # lookups -----------------------------------------------------------------
    def index_of(self, value: float, tol: float = 1e-10) -> int:
        """Index of the node equal to ``value``; raises if ``value`` is not a node."""
        i = int(np.argmin(np.abs(self.nodes - value)))
        if abs(self.nodes[i] - value) > tol * max(1.0, abs(value)):
            raise DomainError(f"{value!r} is not a grid node (nearest {self.nodes[i]!r})")
        return i

    def right_neighbor(self, xi: float) -> float:
        """``xi^+``: smallest node strictly greater than ``xi``."""
        i = np.searchsorted(self.nodes, xi, side="right")
        if i > self.n:
            raise DomainError(f"no node above {xi}")
        return float(self.nodes[i])

    def left_neighbor(self, xi: float) -> float:
        """``xi^-``: largest node strictly smaller than ``xi``."""
        i = np.searchsorted(self.nodes, xi, side="left") - 1
        if i < 0:
            raise DomainError(f"no node below {xi}")
        return float(self.nodes[i])

    def level_plus(self, level: float) -> float:
        """``L^+``: smallest node ``>= L`` (equal to ``L`` when ``L`` is a node)."""
        i = np.searchsorted(self.nodes, level - ANCHOR_TOL * max(1.0, abs(level)), side="left")
        if i > self.n:
            raise DomainError(f"no node at or above {level}")
        return float(self.nodes[i])

    def check_anchors(self) -> None:
        """Raise if an anchor is not where its kind says it is."""
        for value, kind in self.anchors:
            scale = ANCHOR_TOL * max(1.0, abs(value))
            if kind == "on_grid":
                if np.min(np.abs(self.nodes - value)) > scale:
                    raise DomainError(f"anchor {value} is not on the grid")
            elif kind == "midway":
                i = np.searchsorted(self.nodes, value)
                if i == 0 or i > self.n:
                    raise DomainError(f"anchor {value} outside the grid")
                mid = 0.5 * (self.nodes[i - 1] + self.nodes[i])
                if abs(mid - value) > scale:
                    raise DomainError(f"anchor {value} is not midway (interval midpoint {mid})")
            else:
                raise DomainError(f"unknown anchor kind {kind!r}")

    def to_csv(self) -> str:
        """CSV dump with columns ``index, node, step`` (step to the right neighbor)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "node", "step"])
        steps = np.append(self.steps, np.nan)
        for i, (y, s) in enumerate(zip(self.nodes, steps)):
            w.writerow([i, repr(float(y)), "" if np.isnan(s) else repr(float(s))])
        return buf.getvalue()


def uniform_grid(l: float, r: float, n: int) -> Grid:
    """``n + 1`` equally spaced nodes on ``[l, r]``."""
    if not l < r:
        raise DomainError(f"need l < r, got l={l}, r={r}")
    if n < 2:
        raise DomainError("need n >= 2")
    return Grid(np.linspace(l, r, n + 1), ratio_bound=1.0, kind="uniform", blocks=(n,))


def piecewise_uniform_grid(
    l: float, r: float, K: float, L: float, n1: int, n2: int, n3: int, ratio_bound: float = 4.0
) -> Grid:
    """Three uniform blocks with ``L`` a node and ``K`` midway between two nodes.

    For ``K < L`` the blocks are ``[l, K]`` (cell centres), ``(K, L]`` and ``[L, r]``;
    for ``L < K`` the layout is mirrored. ``n1, n2, n3`` count the steps in
    each block from left to right.
    """
    if min(n1, n2, n3) < 1:
        raise DomainError("block counts must be >= 1")
    if K == L:
        raise DomainError("K == L cannot be both on the grid and midway; use pricing.two_grid_price_KeqL")
    if not (l < min(K, L) and max(K, L) < r):
        raise DomainError(f"need l < min(K, L) and max(K, L) < r; got l={l}, K={K}, L={L}, r={r}")
    if K < L:
        h1 = (K - l) / n1
        h2 = (L - K - h1 / 2) / n2
        h3 = (r - L) / n3
        if h2 <= 0:
            raise DomainError("middle block width is nonpositive; increase n1")
        nodes = np.concatenate([
            l + (np.arange(n1) + 0.5) * h1,
            K + h1 / 2 + np.arange(n2) * h2,
            L + np.arange(n3 + 1) * h3,
        ])
    else:
        h1 = (L - l) / n1
        h3 = (r - K) / n3
        h2 = (K - h3 / 2 - L) / n2
        if h2 <= 0:
            raise DomainError("middle block width is nonpositive; increase n3")
        nodes = np.concatenate([
            l + np.arange(n1) * h1,
            L + np.arange(n2 + 1) * h2,
            K + (np.arange(n3) + 0.5) * h3,
        ])
    # pin the anchors exactly
    iL = int(np.argmin(np.abs(nodes - L)))
    nodes[iL] = L
    grid = Grid(nodes, anchors=((float(L), "on_grid"), (float(K), "midway")), ratio_bound=ratio_bound,
                kind="pu", blocks=(n1, n2, n3))
    if grid.step_ratio > ratio_bound:
        warnings.warn(f"PU grid step ratio {grid.step_ratio:.3g} exceeds bound {ratio_bound}", stacklevel=2)
    return grid


def split_budget(widths, n: int, minimum: int = 2) -> tuple[int, ...]:
    """Split ``n`` steps over blocks proportionally to their widths (at least ``minimum`` each)."""
    widths = np.asarray(widths, float)
    if np.any(widths <= 0):
        raise DomainError("block widths must be positive")
    if n < minimum * widths.size:
        raise DomainError(f"budget n={n} too small for {widths.size} blocks")
    counts = np.maximum(np.rint(n * widths / widths.sum()).astype(int), minimum)
    # fix rounding drift on the widest block
    counts[np.argmax(widths)] += n - counts.sum()
    return tuple(int(c) for c in counts)


def pu_grid_from_budget(l: float, r: float, K: float, L: float, n: int, ratio_bound: float = 4.0) -> Grid:
    """PU grid with ``n`` total steps split proportionally to the block widths."""
    if K == L:
        raise DomainError("K == L cannot be both on the grid and midway; use pricing.two_grid_price_KeqL")
    lo, hi = min(K, L), max(K, L)
    counts = split_budget([lo - l, hi - lo, r - hi], n)
    return piecewise_uniform_grid(l, r, K, L, *counts, ratio_bound=ratio_bound)
