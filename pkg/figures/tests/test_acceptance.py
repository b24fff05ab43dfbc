"""Secondary acceptance: all five figure kinds render from artifacts produced
by a real solver run, consumed only through its CLI and CSV schemas."""

import json
import shutil
import subprocess

import pytest

from cls_figures import FigureSpec, render

SOLVER = shutil.which("cls-solver")

pytestmark = pytest.mark.skipif(
    SOLVER is None, reason="cls-solver CLI not on PATH"
)


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("artifacts")
    solve_dir = root / "solve"
    common = [
        "--n-x", "6", "--k", "2", "--p-left", "-2", "--p-right", "2",
        "--n-p", "32", "--t-end", "0.01", "--n-t", "1000",
        "--sample-times", "0.0,0.005,0.01",
    ]
    subprocess.run(
        [SOLVER, "solve", "--scheme", "cls", "--compare", "fdm", "--dump-wpt",
         "--output-dir", str(solve_dir)] + common,
        check=True, capture_output=True,
    )
    sweep_dir = root / "sweep"
    subprocess.run(
        [SOLVER, "sweep", "--param", "dp", "--values", "16,32,64",
         "--output-dir", str(sweep_dir)]
        + [a for a in common if a not in ("--n-p", "32")],
        check=True, capture_output=True,
    )
    return solve_dir, sweep_dir


def test_all_kinds_render(artifacts, tmp_path):
    solve_dir, sweep_dir = artifacts
    jobs = [
        ("solution-profiles", solve_dir / "trajectory.csv"),
        ("error-heatmap", solve_dir / "error_field.csv"),
        ("convergence-loglog", sweep_dir / "convergence.csv"),
        ("wpt-surface", solve_dir / "wpt_state.csv"),
        ("xp-plane", solve_dir / "wpt_state.csv"),
    ]
    for kind, csv_path in jobs:
        out = render(FigureSpec(kind, (csv_path,), tmp_path / f"{kind}.png"))
        assert out.exists() and out.stat().st_size > 0


def test_guide_line_uses_manifest_slope(artifacts, tmp_path):
    _, sweep_dir = artifacts
    manifest = json.loads((sweep_dir / "manifest.json").read_text())
    at_time = manifest["sweep"]["at_time"]
    slope = next(
        s["fitted_slope"]
        for t, s in manifest["studies"].items()
        if float(t) == at_time
    )
    out = render(
        FigureSpec(
            "convergence-loglog", (sweep_dir / "convergence.csv",),
            tmp_path / "conv.svg",
        )
    )
    assert f"slope {slope:.2f}" in out.read_text()
