"""Warped phase transformation of a linear system d u/dt = A u.

A is split into Hermitian parts, A = H1 + i H2, and the dissipative action of
H1 is traded for advection along an auxiliary variable p via v(t, p) =
exp(-p) u(t). On a periodic p-grid with upwind differencing the enlarged
generator is

    H_tilde = -grad_p (x) H1 + I (x) (i H2),

which is skew-Hermitian when grad_p is discretized antisymmetrically.
The physical state is recovered from any node with p > 0 as u = exp(p) v.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from cls_solver.carleman import CarlemanIndexMap, CarlemanState


def _conj_transpose(a):
    if sp.issparse(a):
        return a.conj().T.tocsr()
    return np.conj(a).T


@dataclass(frozen=True)
class HermitianSplit:
    """Decomposition A = h1 + i*h2 with h1, h2 both Hermitian.

    i_h2 is the skew-Hermitian part (A - A^dag)/2; for real A it is the real
    antisymmetric part, which keeps the evolution operators real.
    """

    h1: sp.csr_matrix
    i_h2: sp.csr_matrix

    @property
    def h2(self):
        return -1j * self.i_h2

    @property
    def dim(self) -> int:
        return self.h1.shape[0]

    def reconstruct(self):
        return self.h1 + self.i_h2


def hermitian_split(a) -> HermitianSplit:
    """Split a square matrix into its Hermitian and skew-Hermitian parts."""
    if sp.issparse(a):
        a = a.tocsr()
    else:
        a = np.asarray(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    adag = _conj_transpose(a)
    h1 = (a + adag) * 0.5
    skew = (a - adag) * 0.5
    if sp.issparse(a):
        h1, skew = h1.tocsr(), skew.tocsr()
    return HermitianSplit(h1=h1, i_h2=skew)


@dataclass(frozen=True)
class AuxGrid:
    """Uniform periodic grid on [p_left, p_right) with p_j = p_left + j*dp."""

    p_left: float
    p_right: float
    n_p: int

    def __post_init__(self):
        if not self.p_left < 0.0:
            raise ValueError(f"p_left must be < 0, got {self.p_left}")
        if not self.p_right > 0.0:
            raise ValueError(f"p_right must be > 0, got {self.p_right}")
        if self.n_p < 2:
            raise ValueError(f"n_p must be >= 2, got {self.n_p}")

    @property
    def dp(self) -> float:
        return (self.p_right - self.p_left) / self.n_p

    @property
    def node_coords(self) -> np.ndarray:
        return self.p_left + self.dp * np.arange(self.n_p)


def build_aux_grid(p_left: float, p_right: float, n_p: int) -> AuxGrid:
    """Uniform auxiliary grid with nodes p_j = p_left + j * dp."""
    return AuxGrid(p_left=p_left, p_right=p_right, n_p=n_p)


def build_upwind_gradient(grid: AuxGrid) -> sp.csr_matrix:
    """First-order upwind gradient for right-to-left advection, periodic wrap:
    (1/dp) * (-I + S) with S the forward shift."""
    n = grid.n_p
    shift = _forward_shift(n)
    return ((shift - sp.identity(n, format="csr")) / grid.dp).tocsr()


def build_central_gradient(grid: AuxGrid) -> sp.csr_matrix:
    """Antisymmetric central-difference gradient (S - S^T) / (2 dp), periodic."""
    if grid.n_p < 3:
        raise ValueError("central gradient needs n_p >= 3")
    shift = _forward_shift(grid.n_p)
    return ((shift - shift.T) / (2.0 * grid.dp)).tocsr()


def _forward_shift(n: int) -> sp.csr_matrix:
    rows = np.arange(n)
    cols = (rows + 1) % n
    return sp.csr_matrix((np.ones(n), (rows, cols)), shape=(n, n))


@dataclass(frozen=True)
class WptOperator:
    """Enlarged generator -grad_p (x) H1 + I (x) iH2 kept in factored form.

    The state is blocked p-major: psi = [psi_0; ...; psi_{n_p-1}] with each
    block of length split.dim.
    """

    split: HermitianSplit
    grid: AuxGrid
    grad_p: sp.csr_matrix

    def __post_init__(self):
        if self.grad_p.shape != (self.grid.n_p, self.grid.n_p):
            raise ValueError(
                f"grad_p shape {self.grad_p.shape} does not match n_p {self.grid.n_p}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        d = self.grid.n_p * self.split.dim
        return (d, d)

    def matvec(self, psi: np.ndarray) -> np.ndarray:
        """Apply the operator blockwise without materializing the Kronecker form."""
        n_p, dim = self.grid.n_p, self.split.dim
        if psi.shape[0] != n_p * dim:
            raise ValueError(
                f"state length {psi.shape[0]} != n_p * dim = {n_p * dim}"
            )
        blocks = psi.reshape(n_p, dim)
        h1_blocks = (self.split.h1 @ blocks.T).T
        out = -(self.grad_p @ h1_blocks) + (self.split.i_h2 @ blocks.T).T
        return np.asarray(out).reshape(-1)

    def materialize(self) -> sp.csr_matrix:
        return (
            sp.kron(-self.grad_p, self.split.h1, format="csr")
            + sp.kron(
                sp.identity(self.grid.n_p, format="csr"),
                self.split.i_h2,
                format="csr",
            )
        ).tocsr()


def assemble_wpt_operator(split: HermitianSplit, grid: AuxGrid, grad_p=None) -> WptOperator:
    """Bundle the split with a p-gradient (upwind by default) into the
    enlarged generator."""
    if grad_p is None:
        grad_p = build_upwind_gradient(grid)
    return WptOperator(split=split, grid=grid, grad_p=grad_p.tocsr())


@dataclass(frozen=True)
class WptState:
    """Warped state psi blocked p-major over the auxiliary grid."""

    time: float
    values: np.ndarray
    n_p: int
    index_map: CarlemanIndexMap

    def __post_init__(self):
        values = np.asarray(self.values)
        object.__setattr__(self, "values", values)
        expected = self.n_p * self.index_map.total_dim
        if values.shape != (expected,):
            raise ValueError(
                f"state length {values.shape} != n_p * total_dim = {expected}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")

    def block(self, j: int) -> np.ndarray:
        dim = self.index_map.total_dim
        return self.values[j * dim : (j + 1) * dim]


def initialize_wpt_state(Phi0: CarlemanState, grid: AuxGrid) -> WptState:
    """psi(0) = P (x) Phi(0) with weights P_j = exp(-|p_j|)."""
    weights = np.exp(-np.abs(grid.node_coords))
    return WptState(
        time=Phi0.time,
        values=np.kron(weights, Phi0.values),
        n_p=grid.n_p,
        index_map=Phi0.index_map,
    )


@dataclass(frozen=True)
class RecoverySpec:
    """How to invert the warp: a single node with p > 0 (point mode) or an
    average of exp(p_j) psi_j over a p-window."""

    mode: str = "point"
    index: Optional[int] = None
    window: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.mode not in ("point", "window"):
            raise ValueError(f"unknown recovery mode {self.mode!r}")


def default_recovery_index(grid: AuxGrid) -> int:
    """Smallest node with p_j >= dp; falls back to the smallest positive node."""
    p = grid.node_coords
    eligible = np.flatnonzero(p >= grid.dp * (1.0 - 1e-12))
    if eligible.size == 0:
        eligible = np.flatnonzero(p > 0.0)
    if eligible.size == 0:
        raise ValueError("auxiliary grid has no node with p > 0; cannot recover")
    return int(eligible[0])


def recover_state(
    psi: WptState, grid: AuxGrid, recovery: RecoverySpec = RecoverySpec()
) -> tuple[CarlemanState, dict]:
    """Invert the warp, Phi(t) ~= exp(p) psi(t, p) at p > 0.

    Returns the real recovered state plus diagnostics (recovery location and
    the norm of the discarded imaginary part).
    """
    p = grid.node_coords
    dim = psi.index_map.total_dim
    blocks = psi.values.reshape(grid.n_p, dim)
    if recovery.mode == "point":
        j = recovery.index if recovery.index is not None else default_recovery_index(grid)
        if not 0 <= j < grid.n_p:
            raise ValueError(f"recovery index {j} outside grid")
        if p[j] <= 0.0:
            raise ValueError(f"recovery requires p > 0, node {j} has p = {p[j]}")
        raw = np.exp(p[j]) * blocks[j]
        diag = {"mode": "point", "p_star": float(p[j]), "index": int(j)}
    else:
        lo, hi = recovery.window if recovery.window is not None else (grid.dp / 2, grid.p_right)
        sel = np.flatnonzero((p >= lo) & (p <= hi))
        if sel.size == 0 or np.any(p[sel] <= 0.0):
            raise ValueError(f"recovery window [{lo}, {hi}] must cover only p > 0 nodes")
        raw = (np.exp(p[sel])[:, None] * blocks[sel]).mean(axis=0)
        diag = {"mode": "window", "window": (float(lo), float(hi)), "n_nodes": int(sel.size)}
    imag_norm = float(np.linalg.norm(np.imag(raw)))
    diag["imag_residual_norm"] = imag_norm
    state = CarlemanState(time=psi.time, values=np.real(raw), index_map=psi.index_map)
    return state, diag


def verify_skew_hermitian(split: HermitianSplit, grad_p: sp.csr_matrix) -> float:
    """Max-norm residual || H_tilde + H_tilde^dag ||_max for the materialized
    enlarged generator built from the given p-gradient.

    With an antisymmetric (central) gradient the residual vanishes to roundoff;
    the upwind gradient is not antisymmetric and yields a nonzero residual.
    """
    h_tilde = (
        sp.kron(-grad_p, split.h1, format="csr")
        + sp.kron(sp.identity(grad_p.shape[0], format="csr"), split.i_h2, format="csr")
    ).tocsr()
    residual = h_tilde + h_tilde.conj().T
    residual.eliminate_zeros()
    if residual.nnz == 0:
        return 0.0
    return float(np.abs(residual.data).max())
