"""Error fields, scalar norms, and convergence sweeps over the truncation
order K, the spatial step dx, and the auxiliary step dp, with log-log slope
fitting.

Reference pairing: CL is judged against FDM (and drives the K sweep), CLS
against FDM for the dx sweep, and CLS against CL for the dp sweep, so that
each sweep isolates one error source.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from cls_solver.carleman import assemble_carleman, lift_state
from cls_solver.evolve import (
    TimeGrid,
    Trajectory,
    align_step_count,
    evolve_cl,
    evolve_cls,
    evolve_fdm,
    suggest_dt,
    _inf_norm,
)
from cls_solver.model import (
    ReactionDiffusionParams,
    SpatialGrid1D,
    build_polynomial_system,
    sample_initial,
)
from cls_solver.wpt import AuxGrid, RecoverySpec, hermitian_split

REL_ERROR_FLOOR = 1e-12


@dataclass(frozen=True)
class ErrorField:
    """Pointwise |candidate - reference| and its floored relative version on
    the reference grid."""

    times: np.ndarray
    node_coords: np.ndarray
    abs_error: np.ndarray
    rel_error: np.ndarray

    def row(self, at_time: float) -> int:
        idx = np.flatnonzero(np.isclose(self.times, at_time, rtol=1e-9, atol=1e-12))
        if idx.size != 1:
            raise ValueError(f"time {at_time} is not a sample time of this field")
        return int(idx[0])


@dataclass(frozen=True)
class ConvergenceStudy:
    """(parameter, error) samples with a fitted log-log slope.

    For the K sweep the slope is fitted against log(1/K), so a +1 slope means
    error ~ 1/K; for dx and dp the slope is against log(step size)."""

    parameter: str
    samples: tuple
    fitted_slope: float
    fit_residual: float

    def errors(self) -> np.ndarray:
        return np.array([e for _, e in self.samples])


def _interp_onto(ref_x: np.ndarray, cand_x: np.ndarray, cand_vals: np.ndarray,
                 x_length: float) -> np.ndarray:
    """Linear interpolation with the Dirichlet zeros anchored at both ends."""
    xs = np.concatenate(([0.0], cand_x, [x_length]))
    vs = np.concatenate(([0.0], cand_vals, [0.0]))
    return np.interp(ref_x, xs, vs)


def error_fields(
    candidate: Trajectory,
    reference: Trajectory,
    rel_floor: float = REL_ERROR_FLOOR,
) -> ErrorField:
    """Pointwise errors on the reference grid; the candidate is linearly
    interpolated when the spatial grids differ."""
    if candidate.times.shape != reference.times.shape or not np.allclose(
        candidate.times, reference.times, rtol=1e-9, atol=1e-12
    ):
        raise ValueError(
            f"sample times differ: {candidate.times} vs {reference.times}"
        )
    ref_x = reference.node_coords
    cand_x = candidate.node_coords
    cand_vals = candidate.values_matrix()
    ref_vals = reference.values_matrix()
    if ref_x is None or cand_x is None:
        if cand_vals.shape != ref_vals.shape:
            raise ValueError("grids unknown and shapes differ; cannot compare")
        aligned = cand_vals
        coords = ref_x if ref_x is not None else np.arange(ref_vals.shape[1], dtype=float)
    elif cand_x.shape == ref_x.shape and np.allclose(cand_x, ref_x):
        aligned = cand_vals
        coords = ref_x
    else:
        x_length = float(
            candidate.metadata.get(
                "x_length", max(float(cand_x[-1]), float(ref_x[-1]))
            )
        )
        aligned = np.stack(
            [_interp_onto(ref_x, cand_x, row, x_length) for row in cand_vals]
        )
        coords = ref_x
    abs_error = np.abs(aligned - ref_vals)
    rel_error = abs_error / (np.abs(ref_vals) + rel_floor)
    return ErrorField(
        times=reference.times.copy(),
        node_coords=np.asarray(coords, dtype=float),
        abs_error=abs_error,
        rel_error=rel_error,
    )


def scalar_error(field: ErrorField, norm: str = "l2", at_time: float = None) -> float:
    """Collapse one time slice of the relative error field to a scalar:
    l2 -> sqrt(sum_j rel_j^2 * dx), max -> max_j rel_j."""
    if at_time is None:
        at_time = float(field.times[-1])
    rel = field.rel_error[field.row(at_time)]
    if norm == "max":
        return float(rel.max())
    if norm == "l2":
        if field.node_coords.size > 1:
            dx = float(field.node_coords[1] - field.node_coords[0])
        else:
            dx = 1.0
        return float(np.sqrt(np.sum(rel**2) * dx))
    raise ValueError(f"unknown norm {norm!r}")


def fit_loglog_slope(samples: Sequence[tuple]) -> tuple[float, float]:
    """Least-squares slope of log(error) vs log(parameter); the residual is
    the max deviation in log space."""
    if len(samples) < 3:
        raise ValueError("need at least 3 samples for a slope fit")
    params = np.array([p for p, _ in samples], dtype=float)
    errors = np.array([e for _, e in samples], dtype=float)
    if np.any(params <= 0) or np.any(errors <= 0):
        raise ValueError("parameters and errors must be positive for a log-log fit")
    lx, ly = np.log(params), np.log(errors)
    slope, intercept = np.polyfit(lx, ly, 1)
    residual = float(np.abs(ly - (slope * lx + intercept)).max())
    return float(slope), residual


def _run_points(worker, arg_tuples, jobs: int):
    """Evaluate independent sweep points, optionally across processes."""
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(worker, arg_tuples))
    return [worker(args) for args in arg_tuples]


def _cl_point(args):
    op, Phi0, time_grid, sample_times, grid = args
    return evolve_cl(op, Phi0, time_grid, sample_times, grid=grid)


def _cls_point(args):
    params, grid, aux_grid, time_grid, K, recovery, sample_times = args
    return evolve_cls(
        params, grid, aux_grid, time_grid, K,
        recovery=recovery, sample_times=sample_times,
    )


def _errors_by_time(
    candidate: Trajectory, reference: Trajectory, times: Sequence[float], norm: str
) -> dict[float, float]:
    field = error_fields(candidate, reference)
    return {float(t): scalar_error(field, norm, float(t)) for t in times}


def _study(parameter: str, fit_params, samples) -> ConvergenceStudy:
    slope, resid = fit_loglog_slope(list(zip(fit_params, [e for _, e in samples])))
    return ConvergenceStudy(
        parameter=parameter,
        samples=tuple(samples),
        fitted_slope=slope,
        fit_residual=resid,
    )


def sweep_truncation(
    params: ReactionDiffusionParams,
    grid: SpatialGrid1D,
    t_end: float,
    K_values: Sequence[int],
    sample_times: Optional[Sequence[float]] = None,
    n_t: Optional[int] = None,
    dt_margin: float = 10.0,
    norm: str = "l2",
    jobs: int = 1,
) -> dict[float, ConvergenceStudy]:
    """CL vs FDM per truncation order; one study per sample time with the
    slope fitted against log(1/K)."""
    if len(K_values) < 3:
        raise ValueError("need at least 3 K values")
    if sample_times is None:
        sample_times = [t_end]
    system = build_polynomial_system(params, grid)
    ops = {K: assemble_carleman(system, K) for K in K_values}
    if n_t is None:
        a_norm = max(_inf_norm(op.matrix) for op in ops.values())
        n_t = int(np.ceil(t_end * a_norm * dt_margin / 2.0))
    n_t = align_step_count(t_end, n_t, sample_times)
    time_grid = TimeGrid(t_end=t_end, n_t=n_t)
    phi0 = sample_initial(grid)
    reference = evolve_fdm(params, grid, phi0, time_grid, sample_times)
    points = [
        (ops[K], lift_state(phi0, K), time_grid, sample_times, grid)
        for K in K_values
    ]
    trajectories = _run_points(_cl_point, points, jobs)
    per_K = {
        K: _errors_by_time(traj, reference, sample_times, norm)
        for K, traj in zip(K_values, trajectories)
    }
    studies = {}
    for t in sample_times:
        samples = [(float(K), per_K[K][float(t)]) for K in K_values]
        studies[float(t)] = _study("K", [1.0 / K for K in K_values], samples)
    return studies


def sweep_dx(
    params: ReactionDiffusionParams,
    x_length: float,
    t_end: float,
    nx_values: Sequence[int],
    K: int = 2,
    p_left: float = -10.0,
    p_right: float = 10.0,
    n_p: int = 128,
    sample_times: Optional[Sequence[float]] = None,
    n_t: Optional[int] = None,
    dt_margin: float = 10.0,
    norm: str = "l2",
    ref_refine: int = 4,
    node_layout: str = "cell_centered",
    recovery: RecoverySpec = RecoverySpec(),
    jobs: int = 1,
) -> dict[float, ConvergenceStudy]:
    """CLS vs a refined FDM reference per spatial resolution; slope against
    log(dx). n_p, K, and dt are held fixed across the sweep."""
    if len(nx_values) < 3:
        raise ValueError("need at least 3 n_x values")
    if sample_times is None:
        sample_times = [t_end]
    aux_grid = AuxGrid(p_left=p_left, p_right=p_right, n_p=n_p)
    grids = {nx: SpatialGrid1D(x_length, nx, node_layout) for nx in nx_values}
    if n_t is None:
        finest = grids[max(nx_values)]
        split = hermitian_split(
            assemble_carleman(build_polynomial_system(params, finest), K).matrix
        )
        n_t = int(np.ceil(t_end / suggest_dt(split, aux_grid, dt_margin)))
    n_t = align_step_count(t_end, n_t, sample_times)
    time_grid = TimeGrid(t_end=t_end, n_t=n_t)
    ref_grid = SpatialGrid1D(x_length, ref_refine * max(nx_values), node_layout)
    ref_nt = align_step_count(
        t_end,
        max(n_t, int(np.ceil(t_end * 4.0 * params.D / ref_grid.dx**2))),
        sample_times,
    )
    reference = evolve_fdm(
        params, ref_grid, sample_initial(ref_grid),
        TimeGrid(t_end=t_end, n_t=ref_nt), sample_times,
    )
    points = [
        (params, grids[nx], aux_grid, time_grid, K, recovery, sample_times)
        for nx in nx_values
    ]
    trajectories = _run_points(_cls_point, points, jobs)
    per_nx = {
        nx: _errors_by_time(traj, reference, sample_times, norm)
        for nx, traj in zip(nx_values, trajectories)
    }
    studies = {}
    for t in sample_times:
        samples = [(grids[nx].dx, per_nx[nx][float(t)]) for nx in sorted(nx_values, reverse=True)]
        studies[float(t)] = _study("dx", [p for p, _ in samples], samples)
    return studies


def sweep_dp(
    params: ReactionDiffusionParams,
    grid: SpatialGrid1D,
    t_end: float,
    np_values: Sequence[int],
    K: int = 2,
    p_left: float = -10.0,
    p_right: float = 10.0,
    sample_times: Optional[Sequence[float]] = None,
    n_t: Optional[int] = None,
    dt_margin: float = 10.0,
    norm: str = "l2",
    recovery: RecoverySpec = RecoverySpec(),
    jobs: int = 1,
) -> dict[float, ConvergenceStudy]:
    """CLS vs CL (same lifted system, same dt) per auxiliary resolution;
    slope against log(dp). n_x, K, and dt are held fixed across the sweep."""
    if len(np_values) < 3:
        raise ValueError("need at least 3 n_p values")
    if sample_times is None:
        sample_times = [t_end]
    system = build_polynomial_system(params, grid)
    carleman_op = assemble_carleman(system, K)
    split = hermitian_split(carleman_op.matrix)
    aux_grids = {m: AuxGrid(p_left=p_left, p_right=p_right, n_p=m) for m in np_values}
    if n_t is None:
        finest = aux_grids[max(np_values)]
        n_t = int(np.ceil(t_end / suggest_dt(split, finest, dt_margin)))
    n_t = align_step_count(t_end, n_t, sample_times)
    time_grid = TimeGrid(t_end=t_end, n_t=n_t)
    phi0 = sample_initial(grid)
    reference = evolve_cl(
        carleman_op, lift_state(phi0, K), time_grid, sample_times, grid=grid
    )
    points = [
        (params, grid, aux_grids[m], time_grid, K, recovery, sample_times)
        for m in np_values
    ]
    trajectories = _run_points(_cls_point, points, jobs)
    per_np = {
        m: _errors_by_time(traj, reference, sample_times, norm)
        for m, traj in zip(np_values, trajectories)
    }
    studies = {}
    for t in sample_times:
        samples = [(aux_grids[m].dp, per_np[m][float(t)]) for m in sorted(np_values, reverse=True)]
        studies[float(t)] = _study("dp", [p for p, _ in samples], samples)
    return studies
