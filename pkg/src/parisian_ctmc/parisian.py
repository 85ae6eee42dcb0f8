"""Laplace transforms of Parisian stopping times on a finite Markov chain.

Notation. ``R`` is the set of states where the excursion clock runs (``x < L``
for ``side="below"``, ``x > L`` for ``side="above"``) and ``R^c`` its
complement. With ``I_R`` the diagonal 0/1 mask of ``R``:

    V   = exp(I_R G D) I_R
    U1  = (q I_R - I_R G + I_{R^c})^{-1} I_{R^c}
    U2  = e^{-qD} V U1
    Um  = (q I_{R^c} - I_{R^c} G + I_R)^{-1} I_R
    U   = I_R (U1 - U2) + I_{R^c} Um
    H   = e^{-qD} (I - U)^{-1} I_R V,        h = H e

``H[x, y] = E_x[exp(-q tau) 1{Y_tau = y}]``. Three evaluation routes are
provided: the literal dense formulas (:func:`parisian_transform_general`), the
birth-and-death closed form (:func:`parisian_transform_bd`), and a batched
solver (:class:`ParisianSolver`) that reduces the renewal equation to the
handful of states where the chain enters or leaves ``R``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DomainError, NumericalError, ParisianError
from .generator import Generator
from .linalg import ExpAction, MaskedOperator, exact_expmv, factorize

__all__ = [
    "ExpSettings",
    "ParisianProblem",
    "ParisianTransform",
    "FirstPassageBlocks",
    "first_passage_blocks",
    "parisian_transform_general",
    "parisian_transform_bd",
    "BDTransform",
    "ParisianSolver",
]

# |1 - u^- u^+| below this is reported as a near-singular renewal denominator
DENOM_WARN = 1e-10
# states within this relative distance of L count as sitting on L
LEVEL_TOL = 1e-12


@dataclass(frozen=True)
class ExpSettings:
    """How ``exp(G_RR D)`` is applied: implicit Euler with extrapolation or exact."""

    method: str = "rational"
    m: int = 16
    extrapolation: str = "feng"
    levels: int = 3

    def __post_init__(self):
        if self.method not in ("rational", "exact"):
            raise ValueError(f"unknown exponential method {self.method!r}")


@dataclass(frozen=True)
class ParisianProblem:
    """Single-sided Parisian problem on the chain states ``nodes``.

    ``lower`` is ``I^-_L`` (``x < L``) and ``upper`` is ``I^+_L`` (``x >= L``).
    For ``side="above"`` the clock runs on ``x > L`` and the complement is
    ``x <= L``. ``nodes`` may be any state labels comparable with ``L`` (asset
    prices for regime-switching chains); a node within ``1e-12`` relative of
    ``L`` is treated as equal to it.
    """

    side: str
    L: float
    D: float
    nodes: np.ndarray

    def __post_init__(self):
        if self.side not in ("below", "above"):
            raise DomainError(f"side must be 'below' or 'above', got {self.side!r}")
        if not self.D > 0:
            raise DomainError(f"window D must be positive, got {self.D}")
        nodes = np.asarray(self.nodes, float)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def from_grid(cls, grid, side: str, L: float, D: float) -> "ParisianProblem":
        return cls(side, float(L), float(D), grid.nodes)

    @property
    def _tol(self) -> float:
        return LEVEL_TOL * max(1.0, abs(self.L))

    @property
    def lower(self) -> np.ndarray:
        return self.nodes < self.L - self._tol

    @property
    def upper(self) -> np.ndarray:
        return ~self.lower

    @property
    def inside(self) -> np.ndarray:
        """States where the excursion clock runs."""
        return self.lower if self.side == "below" else self.nodes > self.L + self._tol

    @property
    def outside(self) -> np.ndarray:
        return ~self.inside

    @property
    def L_plus(self) -> int | None:
        """Index of the smallest node ``>= L`` (``None`` if there is none)."""
        idx = np.flatnonzero(self.upper)
        return int(idx[0]) if idx.size else None

    @property
    def L_minus(self) -> int | None:
        """Index of the largest node ``< L``."""
        idx = np.flatnonzero(self.lower)
        return int(idx[-1]) if idx.size else None

    def boundary_pair(self) -> tuple[int | None, int | None]:
        """``(exit, entry)`` states of a birth-and-death chain.

        ``exit`` is where the chain lands when it leaves the clock region,
        ``entry`` where it lands when it comes back.
        """
        ins = np.flatnonzero(self.inside)
        out = np.flatnonzero(self.outside)
        if self.side == "below":
            return (int(out[0]) if out.size else None, int(ins[-1]) if ins.size else None)
        return (int(out[-1]) if out.size else None, int(ins[0]) if ins.size else None)


@dataclass
class ParisianTransform:
    q: complex
    h: np.ndarray
    H: np.ndarray | None = None
    details: dict = field(default_factory=dict)


@dataclass
class FirstPassageBlocks:
    V: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    Um: np.ndarray


def _gmat(gen):
    return gen.matrix if isinstance(gen, Generator) else gen


def _dense(G):
    return G.toarray() if sp.issparse(G) else np.asarray(G)


def _submatrix(G, rows, cols):
    if sp.issparse(G):
        return sp.csr_matrix(G)[rows][:, cols]
    return np.asarray(G)[np.ix_(rows, cols)]


class RegionExp:
    """``B -> exp(G_RR D) B`` on the clock region ``R`` (vectors indexed by ``R``)."""

    def __init__(self, G, mask, D: float, settings: ExpSettings = ExpSettings()):
        self.idx = np.flatnonzero(mask)
        self.D = float(D)
        self.settings = settings
        A = _submatrix(G, self.idx, self.idx)
        if sp.issparse(A):
            A = sp.csc_matrix(A)
        self.A = A
        self._dense_exp = None
        if settings.method == "rational":
            self._act = ExpAction(A, D, settings.m, settings.extrapolation, settings.levels) if self.idx.size else None
        elif not sp.issparse(A) and self.idx.size:
            self._dense_exp = sla.expm(np.asarray(A) * D)

    def __call__(self, B):
        B = np.asarray(B)
        if self.idx.size == 0:
            return B.copy()
        if self.settings.method == "rational":
            return self._act.apply(B)
        if self._dense_exp is not None:
            return self._dense_exp @ B
        if np.iscomplexobj(B):
            return exact_expmv(self.A, self.D, B.real) + 1j * exact_expmv(self.A, self.D, B.imag)
        return exact_expmv(self.A, self.D, B)

    def matrix(self):
        """``exp(G_RR D)`` as a dense array."""
        return self(np.eye(self.idx.size))


def _full_V(G, prob: ParisianProblem, settings: ExpSettings):
    n = prob.nodes.size
    R = prob.inside
    idx = np.flatnonzero(R)
    V = np.zeros((n, n))
    if idx.size:
        V[np.ix_(idx, idx)] = RegionExp(G, R, prob.D, settings).matrix()
    return V


def first_passage_blocks(gen, prob: ParisianProblem, q: complex, exp: ExpSettings = ExpSettings()) -> FirstPassageBlocks:
    """Dense ``V, U1, U2, Um`` for the clock region of ``prob`` at ``q``."""
    G = _gmat(gen)
    n = G.shape[0]
    R = prob.inside
    Rc = ~R
    V = _full_V(G, prob, exp)
    U1 = MaskedOperator(G, R, q).solve(np.diag(Rc.astype(float)))
    U2 = np.exp(-q * prob.D) * (V @ U1)
    Um = MaskedOperator(G, Rc, q).solve(np.diag(R.astype(float)))
    assert V.shape == (n, n)
    return FirstPassageBlocks(V, U1, U2, Um)


def parisian_transform_general(gen, prob: ParisianProblem, q: complex, exp: ExpSettings = ExpSettings()) -> ParisianTransform:
    """``H(q)`` and ``h(q)`` from the dense matrix formulas (``O(n^3)``)."""
    G = _gmat(gen)
    n = G.shape[0]
    blk = first_passage_blocks(G, prob, q, exp)
    R = prob.inside.astype(float)[:, None]
    U = R * (blk.U1 - blk.U2) + (1.0 - R) * blk.Um
    M = np.eye(n) - U
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            H = np.exp(-q * prob.D) * sla.solve(M, R * blk.V)
    except (sla.LinAlgWarning, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"I - U(q) is singular at q={q} (condition ~{np.linalg.cond(M):.3g}): {exc}") from None
    return ParisianTransform(q, H.sum(axis=1), H, {"blocks": blk})


@dataclass
class BDTransform(ParisianTransform):
    """Birth-and-death transform with the scalar renewal quantities exposed."""

    u_exit: np.ndarray | None = None
    u_entry: np.ndarray | None = None
    denominator: complex = 1.0
    _solver: object = field(default=None, repr=False)

    def apply(self, w):
        """``H(q) w`` in ``O(m n)``."""
        return self._solver(w)

    def row(self, x: int):
        """Row ``H(q)[x, :]`` (state-resolved distribution of ``Y_tau``)."""
        return self._solver.row(x)

    def matrix(self):
        return self._solver.matrix()


class _BDKernel:
    def __init__(self, G, prob, q, exp):
        self.G = G
        self.prob = prob
        self.q = q
        n = G.shape[0]
        self.n = n
        R = prob.inside
        self.R = R
        self.ridx = np.flatnonzero(R)
        self.disc = np.exp(-q * prob.D)
        self.exit, self.entry = prob.boundary_pair()
        self.rexp = RegionExp(G, R, prob.D, exp) if self.ridx.size else None
        self.u_exit = np.zeros(n, dtype=complex)
        self.u_entry = np.zeros(n, dtype=complex)
        self.den = 1.0 + 0j
        if self.exit is not None and self.entry is not None:
            e_a = np.zeros(n)
            e_a[self.exit] = 1.0
            u1 = MaskedOperator(G, R, q).solve(e_a)
            u2 = np.zeros(n, dtype=complex)
            u2[self.ridx] = self.disc * self.rexp(u1[self.ridx])
            self.u_exit = u1 - u2
            e_b = np.zeros(n)
            e_b[self.entry] = 1.0
            self.u_entry = MaskedOperator(G, ~R, q).solve(e_b)
            self.den = 1.0 - self.u_entry[self.exit] * self.u_exit[self.entry]
            if abs(self.den) < DENOM_WARN:
                raise NumericalError(f"renewal denominator 1 - u^- u^+ = {self.den:.3g} at q={q}")

    def _assemble(self, Vw_R, Vw_entry):
        out = np.zeros(self.n, dtype=complex)
        if self.ridx.size == 0:
            return out
        out[self.ridx] = self.disc * Vw_R
        if self.exit is None:
            return out
        h_entry = self.disc * Vw_entry / self.den
        h_exit = self.u_entry[self.exit] * h_entry
        R = self.R
        out[R] += self.u_exit[R] * h_exit
        out[~R] += self.u_entry[~R] * h_entry
        return out

    def __call__(self, w):
        w = np.asarray(w)
        if self.ridx.size == 0:
            return np.zeros(self.n, dtype=complex)
        Vw = self.rexp(w[self.ridx])
        full = np.zeros(self.n, dtype=Vw.dtype)
        full[self.ridx] = Vw
        return self._assemble(Vw, full[self.entry] if self.entry is not None else 0.0)

    def matrix(self):
        n = self.n
        H = np.zeros((n, n), dtype=complex)
        if self.ridx.size == 0:
            return H
        E = self.rexp.matrix()
        H[np.ix_(self.ridx, self.ridx)] = self.disc * E
        if self.exit is None:
            return H
        pos = np.searchsorted(self.ridx, self.entry)
        row_entry = np.zeros(n, dtype=complex)
        row_entry[self.ridx] = self.disc * E[pos] / self.den
        row_exit = self.u_entry[self.exit] * row_entry
        R = self.R
        H[R] += np.outer(self.u_exit[R], row_exit)
        H[~R] += np.outer(self.u_entry[~R], row_entry)
        return H

    def row(self, x: int):
        return self.matrix()[x]


def parisian_transform_bd(gen, prob: ParisianProblem, q: complex, exp: ExpSettings = ExpSettings(),
                          materialize: bool = False) -> BDTransform:
    """Birth-and-death closed form: ``h(q)`` in ``O(m n)`` from two masked solves.

    A nearest-neighbour chain can only leave the clock region through one
    state and re-enter through one state, so the renewal equation collapses to
    the scalar denominator ``1 - u^-(L^+) u^+(L^-)``.
    """
    if isinstance(gen, Generator) and gen.structure != "tridiagonal":
        raise ParisianError(f"birth-and-death path needs a tridiagonal generator, got {gen.structure}")
    G = _gmat(gen)
    if not isinstance(gen, Generator):
        Gd = abs(sp.csr_matrix(G)) if sp.issparse(G) else np.abs(np.asarray(G))
        if sp.issparse(Gd):
            Gd = Gd.toarray()
        if np.any(np.triu(Gd, 2)) or np.any(np.tril(Gd, -2)):
            raise ParisianError("birth-and-death path needs a tridiagonal generator")
    if not sp.issparse(G):
        G = sp.csr_matrix(np.asarray(G))
    k = _BDKernel(G, prob, q, exp)
    h = k(np.ones(k.n))
    H = k.matrix() if materialize else None
    return BDTransform(q, h, H, {}, u_exit=k.u_exit, u_entry=k.u_entry, denominator=k.den, _solver=k)


class ParisianSolver:
    """Batched ``H(q) w`` over many ``q`` (the inversion nodes).

    Sparse generators use the boundary-reduced renewal system: with
    ``S_out`` the states the chain can jump to when leaving ``R`` and ``S_in``
    the states it can jump to when entering ``R``, only a
    ``|S_in| x |S_in|`` system is solved per ``q``. All ``q``-dependent
    exponential actions share one set of factorizations. Dense generators use
    block elimination of the ``R / R^c`` partition.
    """

    def __init__(self, gen, prob: ParisianProblem, exp: ExpSettings = ExpSettings(), route: str = "auto"):
        G = _gmat(gen)
        self.G = G
        self.prob = prob
        self.exp = exp
        self.n = G.shape[0]
        R = prob.inside
        self.R = R
        self.ridx = np.flatnonzero(R)
        self.cidx = np.flatnonzero(~R)
        if route == "auto":
            route = "reduced" if sp.issparse(G) else "dense"
        if route not in ("reduced", "dense"):
            raise ValueError(f"unknown route {route!r}")
        self.route = route
        self.rexp = RegionExp(G, R, prob.D, exp) if self.ridx.size else None
        if route == "reduced":
            Gs = sp.csr_matrix(G)
            G_R_C = Gs[self.ridx][:, self.cidx]
            G_C_R = Gs[self.cidx][:, self.ridx]
            # landing states on each side of the boundary
            self.s_out = self.cidx[np.unique(G_R_C.nonzero()[1])] if G_R_C.nnz else np.array([], int)
            self.s_in = self.ridx[np.unique(G_C_R.nonzero()[1])] if G_C_R.nnz else np.array([], int)
        else:
            Gd = np.asarray(_dense(G))
            self.G_RR = Gd[np.ix_(self.ridx, self.ridx)]
            self.G_RC = Gd[np.ix_(self.ridx, self.cidx)]
            self.G_CC = Gd[np.ix_(self.cidx, self.cidx)]
            self.G_CR = Gd[np.ix_(self.cidx, self.ridx)]
            self.E = self.rexp.matrix() if self.ridx.size else np.zeros((0, 0))

    # ------------------------------------------------------------------
    def apply(self, qs, W):
        """``H(q_j) W_j`` for each ``q_j``.

        ``W`` is a vector shared by all ``q`` or an array of shape
        ``(len(qs), n)``. Returns an array of shape ``(len(qs), n)``.
        """
        qs = np.atleast_1d(np.asarray(qs, dtype=complex))
        W = np.asarray(W)
        if W.ndim == 1:
            W = np.broadcast_to(W, (qs.size, self.n))
        if W.shape != (qs.size, self.n):
            raise ValueError(f"W has shape {W.shape}, expected {(qs.size, self.n)}")
        if self.ridx.size == 0:
            return np.zeros((qs.size, self.n), dtype=complex)
        if self.route == "reduced":
            return self._apply_reduced(qs, W)
        return np.stack([self._apply_dense(q, w) for q, w in zip(qs, W)])

    def h(self, qs):
        return self.apply(qs, np.ones(self.n))

    # ------------------------------------------------------------------
    def _apply_reduced(self, qs, W):
        G, R, ridx, n = self.G, self.R, self.ridx, self.n
        nq = qs.size
        s_out, s_in = self.s_out, self.s_in
        ko, ki = s_out.size, s_in.size
        disc = np.exp(-qs * self.prob.D)
        U1 = []
        Um = []
        ko = ko if ki else 0
        for q in qs:
            if ko:
                U1.append(MaskedOperator(G, R, q).solve_masked_columns(s_out))
                Um.append(MaskedOperator(G, ~R, q).solve_masked_columns(s_in))
        # one batched exponential action for every q-dependent right-hand side
        blocks = [W[:, ridx].T]
        if ko:
            blocks += [u[ridx] for u in U1]
        stacked = np.concatenate([np.asarray(b, dtype=complex) for b in blocks], axis=1)
        EX = self.rexp(stacked)
        VW = EX[:, :nq]
        out = np.zeros((nq, n), dtype=complex)
        for j, q in enumerate(qs):
            y = np.zeros(n, dtype=complex)
            y[ridx] = disc[j] * VW[:, j]
            if ko:
                ue = U1[j].astype(complex)
                ue[ridx] -= disc[j] * EX[:, nq + j * ko: nq + (j + 1) * ko]
                um = Um[j]
                # y_in = disc * (V w)_in + ue[in, out] um[out, in] y_in
                A = np.eye(ki) - ue[s_in] @ um[s_out]
                rhs = y[s_in]
                try:
                    y_in = np.linalg.solve(A, rhs)
                except np.linalg.LinAlgError:
                    raise NumericalError(f"boundary renewal system singular at q={q}") from None
                y_out = um[s_out] @ y_in
                y[R] += ue[R] @ y_out
                y[~R] += um[~R] @ y_in
            out[j] = y
        return out

    def _apply_dense(self, q, w):
        ridx, cidx = self.ridx, self.cidx
        disc = np.exp(-q * self.prob.D)
        y = np.zeros(self.n, dtype=complex)
        c = disc * (self.E @ w[ridx])
        if cidx.size == 0:
            y[ridx] = c
            return y
        fR = factorize(q * np.eye(ridx.size) - self.G_RR)
        fC = factorize(q * np.eye(cidx.size) - self.G_CC)
        U1 = fR.solve(self.G_RC.astype(complex))          # R x C
        Ue = U1 - disc * (self.E @ U1)
        Um = fC.solve(self.G_CR.astype(complex))          # C x R
        M = np.eye(ridx.size) - Ue @ Um
        try:
            yR = sla.solve(M, c)
        except np.linalg.LinAlgError:
            raise NumericalError(f"I - U(q) singular at q={q}") from None
        y[ridx] = yR
        y[cidx] = Um @ yR
        return y
