"""Truncated Carleman lift of the quadratic system d phi/dt = F1 phi + F2 phi^(x)2.

The lifted state stacks the Kronecker powers Phi_k = phi^(x)k for k = 1..K
and evolves under the block upper-bidiagonal generator A with blocks

    A_{k,k}   = sum_v I^(x)v (x) F1 (x) I^(x)(k-1-v)
    A_{k,k+1} = sum_v I^(x)v (x) F2 (x) I^(x)(k-1-v)

with the coupling out of the last level dropped by truncation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from cls_solver.model import FieldState, PolynomialSystem


class CarlemanSizeError(RuntimeError):
    """Raised when the requested lift would exceed the configured size cap."""


@dataclass(frozen=True)
class CarlemanIndexMap:
    """Block layout of the lifted state: block k (1-based) holds phi^(x)k."""

    n: int
    K: int

    def __post_init__(self):
        if self.n < 1 or self.K < 1:
            raise ValueError("n and K must be >= 1")

    @property
    def block_offsets(self) -> list[int]:
        offs, acc = [], 0
        for k in range(1, self.K + 1):
            offs.append(acc)
            acc += self.n**k
        return offs

    @property
    def total_dim(self) -> int:
        return sum(self.n**k for k in range(1, self.K + 1))

    def block_slice(self, k: int) -> slice:
        if not 1 <= k <= self.K:
            raise ValueError(f"block index {k} outside 1..{self.K}")
        off = self.block_offsets[k - 1]
        return slice(off, off + self.n**k)


@dataclass(frozen=True)
class CarlemanOperator:
    index_map: CarlemanIndexMap
    matrix: sp.csr_matrix

    @property
    def total_dim(self) -> int:
        return self.index_map.total_dim


@dataclass(frozen=True)
class CarlemanState:
    time: float
    values: np.ndarray
    index_map: CarlemanIndexMap

    def __post_init__(self):
        values = np.asarray(self.values)
        object.__setattr__(self, "values", values)
        if values.shape != (self.index_map.total_dim,):
            raise ValueError(
                f"state length {values.shape} does not match "
                f"total_dim {self.index_map.total_dim}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")

    def block(self, k: int) -> np.ndarray:
        return self.values[self.index_map.block_slice(k)]


def kron(a, b):
    """Kronecker product; dense in -> dense out, sparse otherwise."""
    if isinstance(a, np.ndarray) and isinstance(b, np.ndarray):
        return np.kron(a, b)
    return sp.kron(a, b, format="csr")


def transfer_block(system: PolynomialSystem, k: int, l: int) -> sp.csr_matrix:
    """Block A_{k,l} = sum_{v=0}^{k-1} I^(x)v (x) F_{l-k+1} (x) I^(x)(k-1-v).

    Only F1 and F2 are nonzero for the quadratic system, so l must be k or k+1.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    m = l - k + 1
    if m == 1:
        f = system.f1
    elif m == 2:
        f = system.f2
    else:
        raise ValueError(f"l - k + 1 = {m} outside {{1, 2}}: no such generator")
    n = system.n
    total = None
    for v in range(k):
        term = sp.kron(
            sp.identity(n**v, format="csr"),
            sp.kron(f, sp.identity(n ** (k - 1 - v), format="csr"), format="csr"),
            format="csr",
        )
        total = term if total is None else total + term
    return total.tocsr()


def assemble_carleman(
    system: PolynomialSystem, K: int, max_total_dim: int = 5_000_000
) -> CarlemanOperator:
    """Assemble the truncated Carleman matrix of order K.

    Raises CarlemanSizeError when the lifted dimension exceeds max_total_dim.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    index_map = CarlemanIndexMap(n=system.n, K=K)
    if index_map.total_dim > max_total_dim:
        raise CarlemanSizeError(
            f"lifted dimension {index_map.total_dim} exceeds cap {max_total_dim} "
            f"(n={system.n}, K={K})"
        )
    blocks = [[None] * K for _ in range(K)]
    for k in range(1, K + 1):
        blocks[k - 1][k - 1] = transfer_block(system, k, k)
        if k < K:
            blocks[k - 1][k] = transfer_block(system, k, k + 1)
    matrix = sp.bmat(blocks, format="csr")
    return CarlemanOperator(index_map=index_map, matrix=matrix)


def lift_state(phi: FieldState, K: int) -> CarlemanState:
    """Stack phi^(x)k for k = 1..K by repeated Kronecker products."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    v = np.asarray(phi.values, dtype=float)
    index_map = CarlemanIndexMap(n=v.shape[0], K=K)
    blocks, power = [], v
    for _ in range(K):
        blocks.append(power)
        power = np.kron(power, v)
    return CarlemanState(
        time=phi.time, values=np.concatenate(blocks), index_map=index_map
    )


def project_state(Phi: CarlemanState) -> FieldState:
    """Physical field = first (k = 1) block of the lifted state."""
    return FieldState(time=Phi.time, values=np.real(Phi.block(1)))


def write_matrix_market(matrix, path) -> None:
    """Dump a sparse operator in Matrix Market coordinate format (1-based)."""
    from scipy.io import mmwrite

    mmwrite(str(path), sp.coo_matrix(matrix))
