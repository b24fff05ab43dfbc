"""Command-line entry point: config ingestion, pipeline orchestration,
reproducible run manifests, and CSV artifacts.

Verbs:
  solve  -- run one solver (fdm | cl | cls), optionally against a reference
  sweep  -- convergence sweep over K, dx (n_x list) or dp (n_p list)
  check  -- skew-Hermiticity and stability screening only

Exit codes: 0 success, 2 config error, 3 numerical divergence / instability,
4 sweep slope outside the acceptance band.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time as _time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from cls_solver import analysis
from cls_solver.carleman import assemble_carleman, lift_state
from cls_solver.evolve import (
    DivergenceError,
    StabilityError,
    TimeGrid,
    Trajectory,
    evolve_cl,
    evolve_cls,
    evolve_fdm,
    stability_check,
)
from cls_solver.model import (
    ReactionDiffusionParams,
    SpatialGrid1D,
    build_polynomial_system,
    sample_initial,
)
from cls_solver.wpt import (
    AuxGrid,
    RecoverySpec,
    build_central_gradient,
    hermitian_split,
    verify_skew_hermitian,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_BAND = 4

SLOPE_BANDS = {"K": (0.7, 1.3), "dx": (1.7, 2.3), "dp": (0.7, 1.3)}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Flat run configuration; defaults reproduce the reference conditions
    (D=1, Q=1, R=-1, x in (0,1) with n_x=36, p in [-20,20] with n_p=256,
    dt=1e-6 over T=0.4, K=3)."""

    D: float = 1.0
    Q: float = 1.0
    R: float = -1.0
    x_length: float = 1.0
    n_x: int = 36
    node_layout: str = "cell_centered"
    p_left: float = -20.0
    p_right: float = 20.0
    n_p: int = 256
    t_end: float = 0.4
    n_t: int = 400_000
    K: int = 3
    initial_condition: str = "cosine"
    recovery_mode: str = "point"
    recovery_index: Optional[int] = None
    recovery_window: Optional[str] = None
    sample_times: str = "0.1,0.2,0.3,0.4"
    solver: str = "cls"
    compare: str = "none"
    allow_unstable: bool = False
    dump_wpt: bool = False
    output_dir: str = "out"

    def params(self) -> ReactionDiffusionParams:
        return ReactionDiffusionParams(D=self.D, Q=self.Q, R=self.R)

    def grid(self) -> SpatialGrid1D:
        return SpatialGrid1D(self.x_length, self.n_x, self.node_layout)

    def aux_grid(self) -> AuxGrid:
        return AuxGrid(self.p_left, self.p_right, self.n_p)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(t_end=self.t_end, n_t=self.n_t)

    def recovery(self) -> RecoverySpec:
        window = None
        if self.recovery_window:
            lo, _, hi = self.recovery_window.partition(":")
            window = (float(lo), float(hi))
        return RecoverySpec(
            mode=self.recovery_mode, index=self.recovery_index, window=window
        )

    def parsed_sample_times(self) -> list[float]:
        times = [float(t) for t in self.sample_times.split(",") if t.strip()]
        times = [t for t in times if t <= self.t_end + 1e-15]
        return times if times else [self.t_end]

    def validate(self) -> None:
        try:
            self.params()
            self.grid()
            self.aux_grid()
            self.time_grid()
            self.recovery()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.solver not in ("fdm", "cl", "cls"):
            raise ConfigError(f"solver must be fdm|cl|cls, got {self.solver!r}")
        if self.compare not in ("none", "fdm", "cl", "cls"):
            raise ConfigError(f"compare must be none|fdm|cl|cls, got {self.compare!r}")
        if self.initial_condition != "cosine":
            raise ConfigError(f"unknown initial_condition {self.initial_condition!r}")

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()


_FIELD_TYPES = {f.name: f.type for f in RunConfig.__dataclass_fields__.values()}
_BOOL_KEYS = {"allow_unstable", "dump_wpt"}
_INT_KEYS = {"n_x", "n_p", "n_t", "K", "recovery_index"}
_FLOAT_KEYS = {"D", "Q", "R", "x_length", "p_left", "p_right", "t_end"}


def _coerce(key: str, raw: str):
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected boolean, got {raw!r}")
    if key in _INT_KEYS:
        return int(float(raw)) if ("e" in raw or "." in raw) else int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    return raw


def load_config(path) -> RunConfig:
    """Parse a flat `key = value` UTF-8 config file with `#` comments.
    Unknown keys are errors; missing keys fall back to the defaults."""
    config = RunConfig()
    known = set(RunConfig.__dataclass_fields__)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, raw = stripped.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                setattr(config, key, _coerce(key, raw))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    config.validate()
    return config


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_trajectory_csv(path: Path, trajectory: Trajectory) -> None:
    lines = ["t,x,value"]
    coords = trajectory.node_coords
    for t, state in zip(trajectory.times, trajectory.states):
        xs = coords if coords is not None else np.arange(state.values.size, dtype=float)
        for x, v in zip(xs, state.values):
            lines.append(f"{_fmt(t)},{_fmt(x)},{_fmt(v)}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_error_csv(path: Path, field: analysis.ErrorField) -> None:
    lines = ["t,x,abs,rel"]
    for i, t in enumerate(field.times):
        for j, x in enumerate(field.node_coords):
            lines.append(
                f"{_fmt(t)},{_fmt(x)},{_fmt(field.abs_error[i, j])},{_fmt(field.rel_error[i, j])}"
            )
    _atomic_write(path, "\n".join(lines) + "\n")


def write_convergence_csv(path: Path, study: analysis.ConvergenceStudy, config_hash: str) -> None:
    lines = [f"# config {config_hash}", "param,error,slope_fitted"]
    for p, e in study.samples:
        lines.append(f"{_fmt(p)},{_fmt(e)},{_fmt(study.fitted_slope)}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_wpt_csv(path: Path, snapshots, p_coords, x_coords) -> None:
    """Warped-state snapshots (physical block of each psi_j) as t,p,x,value."""
    lines = ["t,p,x,value"]
    for t, block in snapshots:
        for p, row in zip(p_coords, block):
            for x, v in zip(x_coords, row):
                lines.append(f"{_fmt(t)},{_fmt(p)},{_fmt(x)},{_fmt(v)}")
    _atomic_write(path, "\n".join(lines) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run_one(config: RunConfig, scheme: str) -> Trajectory:
    params, grid = config.params(), config.grid()
    time_grid = config.time_grid()
    samples = config.parsed_sample_times()
    phi0 = sample_initial(grid)
    if scheme == "fdm":
        return evolve_fdm(params, grid, phi0, time_grid, samples)
    if scheme == "cl":
        op = assemble_carleman(build_polynomial_system(params, grid), config.K)
        return evolve_cl(op, lift_state(phi0, config.K), time_grid, samples, grid=grid)
    return evolve_cls(
        params, grid, config.aux_grid(), time_grid, config.K,
        recovery=config.recovery(), sample_times=samples,
        allow_unstable=config.allow_unstable, keep_wpt=config.dump_wpt,
    )


def run_solve(config: RunConfig) -> int:
    """Execute the selected solver and write trajectory.csv, an optional
    error_field.csv against the comparison solver, and manifest.json."""
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _time.perf_counter()
    trajectory = _run_one(config, config.solver)
    artifacts = {}
    traj_path = out / "trajectory.csv"
    write_trajectory_csv(traj_path, trajectory)
    artifacts["trajectory.csv"] = _sha256(traj_path)
    snapshots = trajectory.metadata.pop("wpt_snapshots", None)
    if snapshots is not None:
        wpt_path = out / "wpt_state.csv"
        write_wpt_csv(
            wpt_path, snapshots,
            config.aux_grid().node_coords, config.grid().node_coords,
        )
        artifacts["wpt_state.csv"] = _sha256(wpt_path)
    manifest = {
        "config": asdict(config),
        "config_hash": config.digest(),
        "derived": {
            "dx": config.grid().dx,
            "dp": config.aux_grid().dp,
            "dt": config.time_grid().dt,
            "sample_times": config.parsed_sample_times(),
            "rel_error_floor": analysis.REL_ERROR_FLOOR,
        },
        "scheme": config.solver,
        "metadata": _jsonable(trajectory.metadata),
    }
    if config.compare != "none":
        reference = _run_one(config, config.compare)
        field = analysis.error_fields(trajectory, reference)
        err_path = out / "error_field.csv"
        write_error_csv(err_path, field)
        artifacts["error_field.csv"] = _sha256(err_path)
        manifest["compare"] = {
            "reference": config.compare,
            "l2_rel_error": {
                _fmt(t): analysis.scalar_error(field, "l2", float(t))
                for t in field.times
            },
        }
    manifest["wall_clock_s"] = _time.perf_counter() - started
    manifest["artifacts"] = artifacts
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def run_sweep(
    config: RunConfig,
    param: str,
    values: Sequence[int],
    at_time: Optional[float] = None,
    band: Optional[tuple[float, float]] = None,
    jobs: int = 1,
    dt_margin: float = 10.0,
) -> int:
    """Execute a convergence sweep and write convergence.csv; the exit code
    reflects whether the fitted slope lies inside the acceptance band."""
    config.validate()
    if param not in SLOPE_BANDS:
        raise ConfigError(f"sweep param must be one of {sorted(SLOPE_BANDS)}, got {param!r}")
    if band is None:
        band = SLOPE_BANDS[param]
    samples = config.parsed_sample_times()
    at_time = float(at_time if at_time is not None else samples[-1])
    started = _time.perf_counter()
    common = dict(sample_times=samples, dt_margin=dt_margin, jobs=jobs)
    if param == "K":
        studies = analysis.sweep_truncation(
            config.params(), config.grid(), config.t_end,
            [int(v) for v in values], **common,
        )
    elif param == "dx":
        studies = analysis.sweep_dx(
            config.params(), config.x_length, config.t_end,
            [int(v) for v in values], K=config.K,
            p_left=config.p_left, p_right=config.p_right, n_p=config.n_p,
            node_layout=config.node_layout, recovery=config.recovery(),
            **common,
        )
    else:
        studies = analysis.sweep_dp(
            config.params(), config.grid(), config.t_end,
            [int(v) for v in values], K=config.K,
            p_left=config.p_left, p_right=config.p_right,
            recovery=config.recovery(), **common,
        )
    study = studies[at_time]
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    conv_path = out / "convergence.csv"
    write_convergence_csv(conv_path, study, config.digest())
    manifest = {
        "config": asdict(config),
        "config_hash": config.digest(),
        "sweep": {
            "param": param,
            "values": [int(v) for v in values],
            "at_time": at_time,
            "band": list(band),
            "dt_margin": dt_margin,
        },
        "studies": {
            _fmt(t): {
                "fitted_slope": s.fitted_slope,
                "fit_residual": s.fit_residual,
                "samples": [[p, e] for p, e in s.samples],
            }
            for t, s in studies.items()
        },
        "wall_clock_s": _time.perf_counter() - started,
        "artifacts": {"convergence.csv": _sha256(conv_path)},
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    in_band = band[0] <= study.fitted_slope <= band[1]
    print(
        f"sweep {param}: fitted slope {study.fitted_slope:.4f} at t={at_time:g} "
        f"({'inside' if in_band else 'OUTSIDE'} band [{band[0]}, {band[1]}])"
    )
    return EXIT_OK if in_band else EXIT_BAND


def run_check(config: RunConfig, n_p_check: int = 16) -> int:
    """Skew-Hermiticity of the central-gradient generator plus the stability
    screen for the configured step size."""
    config.validate()
    params, grid = config.params(), config.grid()
    op = assemble_carleman(build_polynomial_system(params, grid), config.K)
    split = hermitian_split(op.matrix)
    small_aux = AuxGrid(config.p_left, config.p_right, min(config.n_p, n_p_check))
    residual = verify_skew_hermitian(split, build_central_gradient(small_aux))
    report = stability_check(params, grid, config.aux_grid(), config.time_grid(), split)
    print(f"skew-Hermitian residual (central gradient): {residual:.3e}")
    print(f"diffusion number: {report.diffusion_number:.3e}")
    print(f"advection number: {report.advection_number:.3e}")
    print(f"one-step spectral radius estimate: {report.spectral_radius:.6f}")
    for flag in report.flags:
        print(f"FLAG: {flag}")
    ok = residual <= 1e-12 and report.ok
    return EXIT_OK if ok else EXIT_DIVERGED


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


_FLAG_KEYS = [
    ("--d", "D", float), ("--q", "Q", float), ("--r", "R", float),
    ("--x-length", "x_length", float), ("--n-x", "n_x", int),
    ("--node-layout", "node_layout", str),
    ("--p-left", "p_left", float), ("--p-right", "p_right", float),
    ("--n-p", "n_p", int), ("--t-end", "t_end", float), ("--n-t", "n_t", int),
    ("--k", "K", int), ("--sample-times", "sample_times", str),
    ("--recovery-mode", "recovery_mode", str),
    ("--recovery-index", "recovery_index", int),
    ("--recovery-window", "recovery_window", str),
    ("--output-dir", "output_dir", str),
]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    for flag, dest, typ in _FLAG_KEYS:
        parser.add_argument(flag, dest=f"cfg_{dest}", type=typ, default=None)
    parser.add_argument("--allow-unstable", action="store_true", default=None,
                        dest="cfg_allow_unstable")
    parser.add_argument("--dump-wpt", action="store_true", default=None,
                        dest="cfg_dump_wpt")


def _build_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    for _, dest, _typ in _FLAG_KEYS:
        value = getattr(args, f"cfg_{dest}", None)
        if value is not None:
            setattr(config, dest, value)
    if getattr(args, "cfg_allow_unstable", None):
        config.allow_unstable = True
    if getattr(args, "cfg_dump_wpt", None):
        config.dump_wpt = True
    if getattr(args, "scheme", None):
        config.solver = args.scheme
    if getattr(args, "compare", None):
        config.compare = args.compare
    config.validate()
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cls-solver", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    solve = sub.add_parser("solve", help="run one solver and emit CSV artifacts")
    _add_common(solve)
    solve.add_argument("--scheme", choices=["fdm", "cl", "cls"])
    solve.add_argument("--compare", choices=["none", "fdm", "cl", "cls"])

    sweep = sub.add_parser("sweep", help="convergence sweep over K, dx or dp")
    _add_common(sweep)
    sweep.add_argument("--param", required=True, choices=["K", "dx", "dp"])
    sweep.add_argument("--values", required=True,
                       help="comma list: K orders, n_x counts, or n_p counts")
    sweep.add_argument("--at-time", type=float, default=None)
    sweep.add_argument("--band", default=None, help="lo:hi acceptance band")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--dt-margin", type=float, default=10.0)

    check = sub.add_parser("check", help="skew-Hermiticity + stability screen")
    _add_common(check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _build_config(args)
        if args.verb == "solve":
            return run_solve(config)
        if args.verb == "sweep":
            values = [int(v) for v in args.values.split(",") if v.strip()]
            band = None
            if args.band:
                lo, _, hi = args.band.partition(":")
                band = (float(lo), float(hi))
            return run_sweep(
                config, args.param, values,
                at_time=args.at_time, band=band, jobs=args.jobs,
                dt_margin=args.dt_margin,
            )
        return run_check(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, StabilityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
