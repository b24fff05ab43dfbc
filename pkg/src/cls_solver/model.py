"""Continuous model and spatial discretization of the 1-D reaction-diffusion
equation

    d phi/dt = D * phi_xx + Q * phi + R * phi^2

on (0, x_R) with homogeneous Dirichlet boundaries, discretized with the
second-order central difference on a uniform grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

_UNIFORMITY_RTOL = 1e-12


@dataclass(frozen=True)
class SpatialGrid1D:
    """Uniform 1-D grid of n_x nodes interior to the Dirichlet boundaries.

    Node placement relative to the boundaries is configurable:

    * ``cell_centered`` (default): x_j = (j + 0.5) * dx, both Dirichlet
      ghosts sit half a cell outside the node range.
    * ``left_offset``: x_j = (j + 1) * dx.

    Either way dx = x_length / n_x.
    """

    x_length: float
    n_x: int
    node_layout: str = "cell_centered"

    def __post_init__(self):
        if self.n_x < 1:
            raise ValueError(f"n_x must be >= 1, got {self.n_x}")
        if self.x_length <= 0:
            raise ValueError(f"x_length must be > 0, got {self.x_length}")
        if self.node_layout not in ("cell_centered", "left_offset"):
            raise ValueError(f"unknown node_layout {self.node_layout!r}")

    @property
    def dx(self) -> float:
        return self.x_length / self.n_x

    @property
    def node_coords(self) -> np.ndarray:
        j = np.arange(self.n_x)
        if self.node_layout == "cell_centered":
            return (j + 0.5) * self.dx
        return (j + 1.0) * self.dx


@dataclass(frozen=True)
class ReactionDiffusionParams:
    """Coefficients of d phi/dt = D phi_xx + Q phi + R phi^2."""

    D: float
    Q: float
    R: float

    def __post_init__(self):
        if not (self.D >= 0):
            raise ValueError(f"D must be >= 0, got {self.D}")
        for name in ("Q", "R"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class FieldState:
    """Sampled field phi_j at one instant."""

    time: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ValueError("values must be a 1-D vector")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")


@dataclass(frozen=True)
class PolynomialSystem:
    """Discretized generator pair for d phi/dt = F1 phi + F2 phi^(x)2.

    f1 = D*Lap + Q*I (n x n); f2 maps the Kronecker square to R*phi_j^2,
    so row j has its single nonzero R at column j*n + j.
    """

    f1: sp.csr_matrix
    f2: sp.csr_matrix
    grid: SpatialGrid1D
    params: ReactionDiffusionParams = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.f1.shape[0]


def build_laplacian(grid: SpatialGrid1D) -> sp.csr_matrix:
    """Second-order central-difference Laplacian with Dirichlet closure
    (ghost values phi_{-1} = phi_{n_x} = 0): (1/dx^2) * tridiag(1, -2, 1)."""
    n = grid.n_x
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    lap = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    return (lap / grid.dx**2).tocsr()


def build_polynomial_system(
    params: ReactionDiffusionParams, grid: SpatialGrid1D
) -> PolynomialSystem:
    """Assemble (F1, F2) for the discretized reaction-diffusion equation."""
    n = grid.n_x
    f1 = (params.D * build_laplacian(grid) + params.Q * sp.identity(n)).tocsr()
    rows = np.arange(n)
    cols = rows * n + rows
    f2 = sp.csr_matrix(
        (np.full(n, params.R, dtype=float), (rows, cols)), shape=(n, n * n)
    )
    return PolynomialSystem(f1=f1, f2=f2, grid=grid, params=params)


def sample_initial(grid: SpatialGrid1D) -> FieldState:
    """Initial distribution phi(0, x) = 0.5 - 0.5*cos(2 pi x) on the grid nodes."""
    x = grid.node_coords
    return FieldState(time=0.0, values=0.5 - 0.5 * np.cos(2.0 * np.pi * x))


def eval_nonlinear_rhs(
    state: FieldState, params: ReactionDiffusionParams, grid: SpatialGrid1D
) -> np.ndarray:
    """Direct evaluation of D*Lap*phi + Q*phi + R*phi^2 (elementwise square);
    never materializes the Kronecker square."""
    phi = state.values
    if phi.shape[0] != grid.n_x:
        raise ValueError(
            f"state has {phi.shape[0]} values but grid has {grid.n_x} nodes"
        )
    lap = build_laplacian(grid)
    return params.D * (lap @ phi) + params.Q * phi + params.R * phi * phi
