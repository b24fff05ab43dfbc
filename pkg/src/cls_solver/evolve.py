"""Time integration.

All production paths use the first-order forward (Euler) scheme so that the
observed convergence orders reflect the spatial discretizations:

* FDM: direct Euler on the nonlinear right-hand side (ground-truth reference),
* CL: Euler on the truncated Carleman system,
* CLS: the blockwise iteration psi_j(n+1) = B1 psi_{j+1}(n) + B2 psi_j(n)
  with periodic wrap, equivalent to multiplication by the block-circulant B.

An exact exponential-propagator oracle emulates step-free Hamiltonian
simulation for generators of moderate dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from cls_solver.carleman import (
    CarlemanOperator,
    CarlemanState,
    assemble_carleman,
    lift_state,
    project_state,
)
from cls_solver.model import (
    FieldState,
    ReactionDiffusionParams,
    SpatialGrid1D,
    build_polynomial_system,
    sample_initial,
)
from cls_solver.wpt import (
    AuxGrid,
    HermitianSplit,
    RecoverySpec,
    WptState,
    hermitian_split,
    initialize_wpt_state,
    recover_state,
)

DIVERGENCE_THRESHOLD = 1e12


class DivergenceError(RuntimeError):
    """Raised when an explicit iteration blows past the magnitude threshold."""

    def __init__(self, step: int, max_magnitude: float):
        self.step = step
        self.max_magnitude = max_magnitude
        super().__init__(
            f"divergence at step {step}: max magnitude {max_magnitude:.3e} "
            f"exceeds {DIVERGENCE_THRESHOLD:.0e}"
        )


class StabilityError(RuntimeError):
    """Raised when an evolution is requested with a flagged stability report."""


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    n_t: int

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError(f"n_t must be >= 1, got {self.n_t}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be >= 0, got {self.t_end}")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_t


@dataclass(frozen=True)
class StepOperator:
    """One-step update matrices of the explicit warped-phase scheme:
    b1 = -H1 dt/dp, b2 = I + H1 dt/dp + i H2 dt."""

    b1: sp.csr_matrix
    b2: sp.csr_matrix
    n_p: int
    dt: float
    dp: float
    # b1 + b2 - I, i.e. i*H2*dt; kept separate so one step costs a single
    # large spmm (with b1) plus this typically tiny one.
    skew_dt: sp.csr_matrix = None

    @property
    def dim(self) -> int:
        return self.b1.shape[0]

    def full(self) -> sp.csr_matrix:
        """Materialized block-circulant step matrix: b2 on the diagonal,
        b1 on the superdiagonal and in the bottom-left corner."""
        n = self.n_p
        rows = np.arange(n)
        shift = sp.csr_matrix((np.ones(n), (rows, (rows + 1) % n)), shape=(n, n))
        return (
            sp.kron(sp.identity(n, format="csr"), self.b2, format="csr")
            + sp.kron(shift, self.b1, format="csr")
        ).tocsr()


@dataclass
class Trajectory:
    """States sampled at configured times, plus scheme metadata."""

    times: np.ndarray
    states: list
    node_coords: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.states) != self.times.shape[0]:
            raise ValueError("times and states must align")
        if self.times.shape[0] > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def values_matrix(self) -> np.ndarray:
        return np.stack([s.values for s in self.states])


def assemble_step(
    split: HermitianSplit, time_grid: TimeGrid, aux_grid: AuxGrid
) -> StepOperator:
    dt, dp = time_grid.dt, aux_grid.dp
    ratio = dt / dp
    eye = sp.identity(split.dim, format="csr")
    b1 = (-split.h1 * ratio).tocsr()
    b2 = (eye + split.h1 * ratio + split.i_h2 * dt).tocsr()
    return StepOperator(
        b1=b1, b2=b2, n_p=aux_grid.n_p, dt=dt, dp=dp,
        skew_dt=(split.i_h2 * dt).tocsr(),
    )


def _step_blocks(w: np.ndarray, op: StepOperator) -> np.ndarray:
    """Advance one step; w has shape (dim, n_p) with column j holding psi_j.

    Uses psi_j' = psi_j + B1 (psi_{j+1} - psi_j) + i H2 dt psi_j, identical to
    B1 psi_{j+1} + B2 psi_j but with a single large sparse multiply.
    """
    if op.skew_dt is None:
        return op.b2 @ w + np.roll(op.b1 @ w, -1, axis=1)
    return w + op.b1 @ (np.roll(w, -1, axis=1) - w) + op.skew_dt @ w


def step_cls(psi: WptState, op: StepOperator) -> WptState:
    """Blockwise update with periodic wrap (block n_p-1 reads block 0)."""
    dim = psi.index_map.total_dim
    if dim != op.dim or psi.n_p != op.n_p:
        raise ValueError("state and step operator dimensions do not match")
    w = psi.values.reshape(op.n_p, dim).T
    out = _step_blocks(np.ascontiguousarray(w), op)
    mags = np.abs(out)
    if not np.all(np.isfinite(out)) or mags.max(initial=0.0) > DIVERGENCE_THRESHOLD:
        raise DivergenceError(step=0, max_magnitude=float(mags.max(initial=np.inf)))
    return WptState(
        time=psi.time + op.dt,
        values=out.T.reshape(-1),
        n_p=psi.n_p,
        index_map=psi.index_map,
    )


def align_step_count(t_end: float, n_t: int, sample_times: Sequence[float]) -> int:
    """Round n_t up so every sample time lands exactly on a step boundary."""
    from fractions import Fraction
    from math import lcm

    denom = 1
    for t in sample_times:
        frac = Fraction(t / t_end).limit_denominator(10**6)
        denom = lcm(denom, frac.denominator)
    return ((n_t + denom - 1) // denom) * denom


def _sample_steps(time_grid: TimeGrid, sample_times: Sequence[float]) -> list[int]:
    steps = []
    for t in sample_times:
        n = int(round(t / time_grid.dt)) if time_grid.dt > 0 else 0
        if not 0 <= n <= time_grid.n_t:
            raise ValueError(f"sample time {t} outside [0, {time_grid.t_end}]")
        steps.append(n)
    if steps != sorted(steps) or len(set(steps)) != len(steps):
        raise ValueError("sample times must map to strictly increasing steps")
    return steps


def evolve_fdm(
    params: ReactionDiffusionParams,
    grid: SpatialGrid1D,
    phi0: FieldState,
    time_grid: TimeGrid,
    sample_times: Optional[Sequence[float]] = None,
    check_interval: int = 200,
) -> Trajectory:
    """Forward-Euler reference on the nonlinear right-hand side."""
    system = build_polynomial_system(params, grid)
    diffusion_number = 2.0 * params.D * time_grid.dt / grid.dx**2
    if sample_times is None:
        sample_times = [time_grid.t_end]
    steps = _sample_steps(time_grid, sample_times)
    phi = np.array(phi0.values, dtype=float)
    dt, f1, R = time_grid.dt, system.f1, params.R
    out_times, out_states = [], []

    def sample(n):
        out_times.append(n * dt)
        out_states.append(FieldState(time=n * dt, values=phi.copy()))

    target = set(steps)
    if 0 in target:
        sample(0)
    for n in range(time_grid.n_t):
        phi = phi + dt * (f1 @ phi + R * phi * phi)
        if (n + 1) % check_interval == 0 or (n + 1) in target:
            _check_divergence(phi, n + 1)
        if (n + 1) in target:
            sample(n + 1)
    meta = {"scheme": "fdm", "diffusion_number": diffusion_number, "dt": dt}
    if diffusion_number >= 1.0:
        meta["warning"] = f"diffusion number {diffusion_number:.3g} >= 1"
    return Trajectory(
        times=np.array(out_times), states=out_states,
        node_coords=grid.node_coords, metadata=meta,
    )


def evolve_cl(
    carleman_op: CarlemanOperator,
    Phi0: CarlemanState,
    time_grid: TimeGrid,
    sample_times: Optional[Sequence[float]] = None,
    grid: Optional[SpatialGrid1D] = None,
    check_interval: int = 200,
) -> Trajectory:
    """Forward Euler on the truncated lifted system; samples are projected to
    the physical field."""
    if sample_times is None:
        sample_times = [time_grid.t_end]
    steps = _sample_steps(time_grid, sample_times)
    a = carleman_op.matrix
    dt = time_grid.dt
    Phi = np.array(Phi0.values, dtype=float)
    out_times, out_states = [], []
    target = set(steps)

    def sample(n):
        state = CarlemanState(time=n * dt, values=Phi.copy(),
                              index_map=carleman_op.index_map)
        out_times.append(n * dt)
        out_states.append(project_state(state))

    if 0 in target:
        sample(0)
    for n in range(time_grid.n_t):
        Phi = Phi + dt * (a @ Phi)
        if (n + 1) % check_interval == 0 or (n + 1) in target:
            _check_divergence(Phi, n + 1)
        if (n + 1) in target:
            sample(n + 1)
    return Trajectory(
        times=np.array(out_times), states=out_states,
        node_coords=None if grid is None else grid.node_coords,
        metadata={"scheme": "cl", "K": carleman_op.index_map.K, "dt": dt},
    )


def evolve_cls(
    params: ReactionDiffusionParams,
    grid: SpatialGrid1D,
    aux_grid: AuxGrid,
    time_grid: TimeGrid,
    K: int,
    recovery: RecoverySpec = RecoverySpec(),
    sample_times: Optional[Sequence[float]] = None,
    phi0: Optional[FieldState] = None,
    allow_unstable: bool = False,
    max_total_dim: int = 5_000_000,
    check_interval: int = 200,
    keep_wpt: bool = False,
) -> Trajectory:
    """Full pipeline: lift -> Hermitian split -> warp -> explicit iteration ->
    recovery at the sample times."""
    system = build_polynomial_system(params, grid)
    carleman_op = assemble_carleman(system, K, max_total_dim=max_total_dim)
    if phi0 is None:
        phi0 = sample_initial(grid)
    Phi0 = lift_state(phi0, K)
    split = hermitian_split(carleman_op.matrix)
    report = stability_check(params, grid, aux_grid, time_grid, split)
    if report.flags and not allow_unstable:
        raise StabilityError("; ".join(report.flags))
    psi0 = initialize_wpt_state(Phi0, aux_grid)
    op = assemble_step(split, time_grid, aux_grid)

    if sample_times is None:
        sample_times = [time_grid.t_end]
    steps = _sample_steps(time_grid, sample_times)
    target = set(steps)
    dim = carleman_op.total_dim
    w = np.ascontiguousarray(psi0.values.reshape(aux_grid.n_p, dim).T)
    dt = time_grid.dt
    out_times, out_states, recovery_diags, wpt_snapshots = [], [], [], []

    def sample(n):
        state = WptState(time=n * dt, values=np.asarray(w.T).reshape(-1),
                         n_p=aux_grid.n_p, index_map=carleman_op.index_map)
        Phi, diag = recover_state(state, aux_grid, recovery)
        diag["time"] = n * dt
        recovery_diags.append(diag)
        out_times.append(n * dt)
        out_states.append(project_state(Phi))
        if keep_wpt:
            # physical (k=1) block of every psi_j, shape (n_p, n_x)
            wpt_snapshots.append((n * dt, np.array(w[: grid.n_x, :].T)))

    if 0 in target:
        sample(0)
    for n in range(time_grid.n_t):
        w = _step_blocks(w, op)
        if (n + 1) % check_interval == 0 or (n + 1) in target:
            _check_divergence(w, n + 1)
        if (n + 1) in target:
            sample(n + 1)
    return Trajectory(
        times=np.array(out_times),
        states=out_states,
        node_coords=grid.node_coords,
        metadata={
            "scheme": "cls",
            "K": K,
            "dt": dt,
            "dp": aux_grid.dp,
            "stability": report.as_dict(),
            "recovery": recovery_diags,
            **({"wpt_snapshots": wpt_snapshots} if keep_wpt else {}),
        },
    )


def _check_divergence(arr: np.ndarray, step: int) -> None:
    m = float(np.max(np.abs(arr)))
    if not math.isfinite(m) or m > DIVERGENCE_THRESHOLD:
        raise DivergenceError(step=step, max_magnitude=m)


def exact_expm_evolve(
    generator,
    state: np.ndarray,
    t: float,
    max_dim: int = 4096,
    check_residual: bool = False,
) -> np.ndarray:
    """Ideal propagator: returns exp(G t) @ state via scaling-and-squaring
    action (no time stepping).

    With check_residual, verifies d/dt exp(G t) state = G exp(G t) state by a
    central finite difference to 1e-8 relative.
    """
    if hasattr(generator, "materialize"):
        generator = generator.materialize()
    g = generator.tocsr() if sp.issparse(generator) else np.asarray(generator)
    if g.shape[0] != g.shape[1]:
        raise ValueError("generator must be square")
    if g.shape[0] > max_dim:
        raise ValueError(f"generator dimension {g.shape[0]} exceeds cap {max_dim}")
    state = np.asarray(state)
    out = spla.expm_multiply(g * t, state)
    if check_residual:
        h = max(1e-6, abs(t) * 1e-6)
        fwd = spla.expm_multiply(g * (t + h), state)
        bwd = spla.expm_multiply(g * (t - h), state)
        deriv = (fwd - bwd) / (2 * h)
        resid = np.linalg.norm(deriv - g @ out)
        scale = max(1.0, float(np.linalg.norm(g @ out)))
        if resid / scale > 1e-6:
            raise RuntimeError(f"propagator residual {resid:.3e} too large")
    return out


@dataclass(frozen=True)
class StabilityReport:
    diffusion_number: float
    advection_number: float
    spectral_radius: float
    flags: tuple

    @property
    def ok(self) -> bool:
        return not self.flags

    def as_dict(self) -> dict:
        return {
            "diffusion_number": self.diffusion_number,
            "advection_number": self.advection_number,
            "spectral_radius": self.spectral_radius,
            "flags": list(self.flags),
        }


def stability_check(
    params: ReactionDiffusionParams,
    grid: SpatialGrid1D,
    aux_grid: AuxGrid,
    time_grid: TimeGrid,
    split: HermitianSplit,
    power_iterations: int = 30,
    seed: int = 0,
) -> StabilityReport:
    """Screen the explicit scheme: diffusion number 2 D dt/dx^2, advection
    number ||H1||_inf dt/dp, and a power-iteration estimate of the spectral
    radius of the one-step matrix. Any number >= 1 (radius > 1 + eps) is flagged."""
    dt = time_grid.dt
    diffusion = 2.0 * params.D * dt / grid.dx**2
    h1_norm = _inf_norm(split.h1)
    advection = h1_norm * dt / aux_grid.dp
    op = assemble_step(split, time_grid, aux_grid)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((split.dim, aux_grid.n_p))
    radius = 0.0
    for _ in range(power_iterations):
        w = _step_blocks(w, op)
        radius = float(np.linalg.norm(w))
        if radius == 0.0:
            break
        w /= radius
    flags = []
    if diffusion >= 1.0:
        flags.append(f"diffusion number {diffusion:.3g} >= 1")
    if advection >= 1.0:
        flags.append(f"advection number {advection:.3g} >= 1")
    if radius > 1.0 + 1e-9:
        flags.append(f"one-step spectral radius estimate {radius:.6g} > 1")
    return StabilityReport(
        diffusion_number=diffusion,
        advection_number=advection,
        spectral_radius=radius,
        flags=tuple(flags),
    )


def _inf_norm(m) -> float:
    if sp.issparse(m):
        return float(np.abs(m).sum(axis=1).max())
    return float(np.abs(m).sum(axis=1).max())


def suggest_dt(h1_norm_or_split, aux_grid: AuxGrid, margin: float = 10.0) -> float:
    """Time step with the advection number held at 1/margin."""
    h1_norm = (
        _inf_norm(h1_norm_or_split.h1)
        if hasattr(h1_norm_or_split, "h1")
        else float(h1_norm_or_split)
    )
    if h1_norm == 0.0:
        raise ValueError("cannot suggest dt for a zero Hermitian part")
    return aux_grid.dp / (margin * h1_norm)
