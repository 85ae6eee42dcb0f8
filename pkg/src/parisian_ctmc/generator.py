"""Transition-rate matrices of the approximating Markov chain."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import GeneratorError, NumericalError
from .grid import Grid
from .model import ModelSpec

__all__ = ["Generator", "build_generator", "row_diagnostics", "jump_cell_integrals"]

STRUCTURES = ("tridiagonal", "banded", "dense")


@dataclass(frozen=True)
class Generator:
    """Rate matrix ``G`` of a finite chain.

    ``matrix`` is a CSR matrix for ``tridiagonal``/``banded`` structure and a
    dense array otherwise. ``absorbing`` flags states whose rows are zero.
    """

    matrix: sp.csr_matrix | np.ndarray
    structure: str
    nodes: np.ndarray
    absorbing: np.ndarray
    grid: Grid | None = None

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise GeneratorError(f"unknown structure {self.structure!r}")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def matvec(self, v):
        return self.matrix @ v

    def to_triplets_csv(self) -> str:
        """Export nonzero entries as ``row, col, rate`` CSV."""
        coo = sp.coo_matrix(self.matrix)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "rate"])
        order = np.lexsort((coo.col, coo.row))
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            w.writerow([int(i), int(j), repr(float(v))])
        return buf.getvalue()


def jump_cell_integrals(model: ModelSpec, grid: Grid):
    """Cell masses ``Lambda(x, y)`` and the small-jump corrections for interior states.

    Returns ``(lam, sigma_bar2, mu_bar)`` where ``lam`` has shape
    ``(n - 1, n + 1)`` (interior rows, all columns, own cell zeroed).
    """
    nu = model.jumps
    y = grid.nodes
    x = y[1:-1][:, None]
    edges = np.concatenate([[-np.inf], 0.5 * (y[1:] + y[:-1]), [np.inf]])
    lo = edges[:-1][None, :] - x
    hi = edges[1:][None, :] - x
    lam = np.asarray(nu.mass(x, lo, hi), float)
    if not np.all(np.isfinite(lam[~np.eye(*lam.shape, k=1, dtype=bool)])):
        raise NumericalError("jump cell quadrature produced non-finite masses")
    own = np.eye(y.size - 2, y.size, k=1, dtype=bool)
    lam = np.where(own, 0.0, np.maximum(lam, 0.0))
    # own cell contains z = 0: absorbed into the diffusion coefficient
    lo_own = np.clip(lo[own], -1.0, 1.0)
    hi_own = np.clip(hi[own], -1.0, 1.0)
    sigma_bar2 = np.asarray(nu.moment2(y[1:-1], lo_own, hi_own), float)
    # compensator: sum_y (y - x) * nu((I_y - x) cap [-1, 1])
    lo_c = np.clip(lo, -1.0, 1.0)
    hi_c = np.clip(hi, -1.0, 1.0)
    small = np.where(own | (hi_c <= lo_c), 0.0, np.asarray(nu.mass(x, lo_c, hi_c), float))
    mu_bar = np.sum((y[None, :] - x) * small, axis=1)
    return lam, sigma_bar2, mu_bar


def build_generator(model: ModelSpec, grid: Grid, drift_scheme: str = "central_with_upwind_fallback") -> Generator:
    """Generator of the chain on ``grid`` matching drift, variance and jump mass.

    ``y_0`` and ``y_n`` are absorbing. With ``drift_scheme="central"`` a negative
    neighbour rate is an error; the default switches that node to one-sided
    drift differencing.
    """
    if drift_scheme not in ("central", "central_with_upwind_fallback"):
        raise GeneratorError(f"unknown drift scheme {drift_scheme!r}")
    y = grid.nodes
    n1 = y.size
    xi = y[1:-1]
    model.check(y)
    dp, dm = grid.step_plus, grid.step_minus
    dd = 0.5 * (dp + dm)
    mu = np.asarray(model.drift(xi), float) * np.ones_like(xi)
    s2 = np.asarray(model.vol(xi), float) ** 2 * np.ones_like(xi)

    lam = None
    if model.jumps is not None:
        lam, sbar2, mubar = jump_cell_integrals(model, grid)
        s2 = s2 + sbar2
        mu = mu - mubar

    up = (mu * dm + s2) / (2 * dp * dd)
    down = (-mu * dp + s2) / (2 * dm * dd)
    k = np.arange(xi.size)
    lam_up = lam[k, k + 2] if lam is not None else 0.0
    lam_down = lam[k, k] if lam is not None else 0.0
    bad = (up + lam_up < 0) | (down + lam_down < 0)
    if np.any(bad):
        if drift_scheme == "central":
            i = int(np.flatnonzero(bad)[0]) + 1
            raise GeneratorError(f"negative central-difference rate at node {i} (x={y[i]:.6g}); "
                                 "refine the grid or enable the upwind fallback")
        pos = mu > 0
        up_w = np.where(pos, mu / dp, 0.0) + s2 / (2 * dp * dd)
        down_w = np.where(pos, 0.0, -mu / dm) + s2 / (2 * dm * dd)
        up = np.where(bad, up_w, up)
        down = np.where(bad, down_w, down)

    rows = np.arange(1, n1 - 1)
    absorbing = np.zeros(n1, dtype=bool)
    absorbing[[0, -1]] = True
    if lam is None:
        diag = -(up + down)
        mat = sp.csr_matrix(
            (np.concatenate([down, diag, up]),
             (np.concatenate([rows, rows, rows]), np.concatenate([rows - 1, rows, rows + 1]))),
            shape=(n1, n1),
        )
        return Generator(mat, "tridiagonal", y, absorbing, grid)

    G = np.zeros((n1, n1))
    G[1:-1, :] = lam
    G[rows, rows + 1] += up
    G[rows, rows - 1] += down
    G[rows, rows] = 0.0
    G[rows, rows] = -G[rows].sum(axis=1)
    return Generator(G, "dense", y, absorbing, grid)


def row_diagnostics(gen: Generator, tol: float = 1e-12) -> dict:
    """Row-sum residuals, smallest off-diagonal rate and structure of ``gen``."""
    G = gen.dense()
    off = G - np.diag(np.diag(G))
    scale = np.maximum(np.abs(off).sum(axis=1), 1.0)
    resid = np.abs(G.sum(axis=1)) / scale
    nonzero_off = np.abs(off) > 0
    bandwidth = int(np.max(np.abs(np.subtract(*np.nonzero(nonzero_off))))) if nonzero_off.any() else 0
    return {
        "structure": gen.structure,
        "min_offdiag": float(off[~np.eye(*G.shape, dtype=bool)].min()),
        "max_row_residual": float(resid.max()),
        "bandwidth": bandwidth,
        "absorbing_rows_zero": bool(np.all(G[gen.absorbing] == 0)),
        "flagged": bool(resid.max() > tol or off.min() < 0),
    }
