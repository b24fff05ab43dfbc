"""Figure rendering from the solver CLI's CSV artifacts.

Five kinds are supported, each reading only the documented CSV schemas:

* solution-profiles   trajectory.csv   (t,x,value)
* error-heatmap       error_field.csv  (t,x,abs,rel)
* convergence-loglog  convergence.csv  (param,error,slope_fitted)
* wpt-surface         wpt_state.csv    (t,p,x,value)
* xp-plane            wpt_state.csv    (t,p,x,value)

Rendering is read-only and idempotent; no quantity is recomputed here, in
particular the convergence guide line uses the fitted slope carried in the
CSV itself.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

EXPECTED_HEADERS = {
    "solution-profiles": ["t", "x", "value"],
    "error-heatmap": ["t", "x", "abs", "rel"],
    "convergence-loglog": ["param", "error", "slope_fitted"],
    "wpt-surface": ["t", "p", "x", "value"],
    "xp-plane": ["t", "p", "x", "value"],
}
FIGURE_KINDS = tuple(EXPECTED_HEADERS)


class InputError(ValueError):
    """Missing file, wrong header, or empty data."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple
    output: Path
    dpi: int = 150
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise InputError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise InputError("at least one input CSV is required")
        object.__setattr__(self, "inputs", tuple(Path(p) for p in self.inputs))
        object.__setattr__(self, "output", Path(self.output))


def load_csv(path: Path, expected_header: list[str]) -> dict[str, np.ndarray]:
    """Read one artifact into column arrays; `#` comment lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"input not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise InputError(f"{path}: no data")
    header, body = rows[0], rows[1:]
    if header != expected_header:
        raise InputError(
            f"{path}: header {header} does not match expected {expected_header}"
        )
    if not body:
        raise InputError(f"{path}: header only, no rows")
    data = np.array(body, dtype=float)
    return {name: data[:, i] for i, name in enumerate(header)}


def _pivot(rows: np.ndarray, cols: np.ndarray, values: np.ndarray):
    """Arrange a flat (row-key, col-key, value) triple into a dense grid."""
    r = np.unique(rows)
    c = np.unique(cols)
    grid = np.full((r.size, c.size), np.nan)
    ri = np.searchsorted(r, rows)
    ci = np.searchsorted(c, cols)
    grid[ri, ci] = values
    if np.isnan(grid).any():
        raise InputError("input rows do not form a complete grid")
    return r, c, grid


def _render_solution_profiles(spec: FigureSpec, ax) -> None:
    data = load_csv(spec.inputs[0], EXPECTED_HEADERS["solution-profiles"])
    times, x, phi = _pivot(data["t"], data["x"], data["value"])
    for i, t in enumerate(times):
        style = {"linestyle": "--", "color": "k"} if t == 0.0 else {}
        ax.plot(x, phi[i], label=f"t = {t:g}", **style)
    ax.set_xlabel("x")
    ax.set_ylabel(r"$\phi$")
    ax.legend()
    ax.set_title("solution profiles")


def _render_error_heatmap(spec: FigureSpec, fig) -> None:
    data = load_csv(spec.inputs[0], EXPECTED_HEADERS["error-heatmap"])
    axes = fig.subplots(1, 2)
    for ax, column, label in zip(axes, ("abs", "rel"), ("absolute", "relative")):
        times, x, err = _pivot(data["t"], data["x"], data[column])
        if times.size == 1:
            ax.plot(x, err[0])
            ax.set_xlabel("x")
            ax.set_ylabel(f"{label} error")
        else:
            mesh = ax.pcolormesh(x, times, err, shading="nearest")
            fig.colorbar(mesh, ax=ax)
            ax.set_xlabel("x")
            ax.set_ylabel("t")
        ax.set_title(f"{label} error")


def _render_convergence(spec: FigureSpec, ax) -> None:
    data = load_csv(spec.inputs[0], EXPECTED_HEADERS["convergence-loglog"])
    p, e = data["param"], data["error"]
    if np.any(p <= 0) or np.any(e <= 0):
        raise InputError("log-log axes need positive parameters and errors")
    slope = float(data["slope_fitted"][0])
    order = np.argsort(p)
    p, e = p[order], e[order]
    ax.loglog(p, e, "o-", label="measured")
    # guide line through the last (coarsest) sample with the fitted slope
    guide = e[-1] * (p / p[-1]) ** slope
    ax.loglog(p, guide, "k--", label=f"slope {slope:.2f}")
    ax.set_xlabel("parameter")
    ax.set_ylabel("error")
    ax.legend()
    ax.set_title("convergence")


def _select_times(available: np.ndarray, spec: FigureSpec) -> np.ndarray:
    wanted = spec.extra.get("times")
    if wanted is None:
        return available
    picked = []
    for t in wanted:
        idx = np.argmin(np.abs(available - t))
        picked.append(available[idx])
    return np.unique(picked)


def _render_wpt_surface(spec: FigureSpec, fig) -> None:
    data = load_csv(spec.inputs[0], EXPECTED_HEADERS["wpt-surface"])
    t0 = data["t"].min()
    at0 = data["t"] == t0
    p, x, psi = _pivot(data["p"][at0], data["x"][at0], data["value"][at0])
    ax = fig.add_subplot(projection="3d")
    xg, pg = np.meshgrid(x, p)
    ax.plot_surface(xg, pg, psi, cmap="viridis")
    ax.set_xlabel("x")
    ax.set_ylabel("p")
    ax.set_zlabel(r"$\psi$")
    ax.set_title(f"warped state at t = {t0:g}")


def _render_xp_plane(spec: FigureSpec, fig) -> None:
    data = load_csv(spec.inputs[0], EXPECTED_HEADERS["xp-plane"])
    times = _select_times(np.unique(data["t"]), spec)
    axes = fig.subplots(1, times.size, squeeze=False)[0]
    for ax, t in zip(axes, times):
        sel = data["t"] == t
        p, x, psi = _pivot(data["p"][sel], data["x"][sel], data["value"][sel])
        mesh = ax.pcolormesh(x, p, np.abs(psi), shading="nearest")
        fig.colorbar(mesh, ax=ax)
        ax.set_xlabel("x")
        ax.set_ylabel("p")
        ax.set_title(f"t = {t:g}")


def render(spec: FigureSpec) -> Path:
    """Render one figure and return the output path."""
    if spec.kind == "error-heatmap":
        fig = plt.figure(figsize=(10, 4))
        _render_error_heatmap(spec, fig)
    elif spec.kind == "wpt-surface":
        fig = plt.figure(figsize=(7, 5))
        _render_wpt_surface(spec, fig)
    elif spec.kind == "xp-plane":
        fig = plt.figure(figsize=(11, 4))
        _render_xp_plane(spec, fig)
    else:
        fig, ax = plt.subplots(figsize=(6, 4.5))
        if spec.kind == "solution-profiles":
            _render_solution_profiles(spec, ax)
        else:
            _render_convergence(spec, ax)
    try:
        fig.tight_layout()
        spec.output.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(spec.output, dpi=spec.dpi)
    finally:
        plt.close(fig)
    return spec.output
