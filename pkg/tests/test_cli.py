import json
from pathlib import Path

import numpy as np
import pytest

from cls_solver.cli import (
    EXIT_BAND,
    EXIT_CONFIG,
    EXIT_DIVERGED,
    EXIT_OK,
    ConfigError,
    RunConfig,
    load_config,
    main,
    run_check,
    run_solve,
)

# small enough to finish in well under a second per run
FAST = dict(
    n_x=4, K=2, p_left=-2.0, p_right=2.0, n_p=16,
    t_end=1e-3, n_t=100, sample_times="0.0005,0.001",
)


def fast_config(tmp_path, **overrides):
    kwargs = dict(FAST, output_dir=str(tmp_path / "out"))
    kwargs.update(overrides)
    return RunConfig(**kwargs)


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    data = [l for l in lines if not l.startswith("#")]
    return data[0].split(","), [l.split(",") for l in data[1:]]


class TestConfig:
    def test_defaults(self):
        config = RunConfig()
        assert (config.D, config.Q, config.R) == (1.0, 1.0, -1.0)
        assert config.n_x == 36 and config.n_p == 256
        assert (config.p_left, config.p_right) == (-20.0, 20.0)
        assert config.time_grid().dt == pytest.approx(1e-6)
        assert config.K == 3

    def test_load_with_comments(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("# comment\nn_x = 8\nD = 0.5  # trailing\n\nK=2\n")
        config = load_config(f)
        assert config.n_x == 8
        assert config.D == 0.5
        assert config.K == 2
        assert config.Q == 1.0  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("n_y = 8\n")
        with pytest.raises(ConfigError):
            load_config(f)

    def test_bad_value_rejected(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("n_x = eight\n")
        with pytest.raises(ConfigError):
            load_config(f)

    def test_scientific_int(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("n_t = 4e5\n")
        assert load_config(f).n_t == 400_000

    def test_bool_coercion(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("allow_unstable = true\ndump_wpt = no\n")
        config = load_config(f)
        assert config.allow_unstable is True
        assert config.dump_wpt is False

    def test_validate_catches_bad_solver(self):
        with pytest.raises(ConfigError):
            RunConfig(solver="spectral").validate()

    def test_sample_times_clipped_to_horizon(self):
        config = RunConfig(t_end=0.2, sample_times="0.1,0.2,0.3")
        assert config.parsed_sample_times() == [0.1, 0.2]

    def test_digest_tracks_content(self):
        a, b = RunConfig(), RunConfig()
        assert a.digest() == b.digest()
        b.n_x = 37
        assert a.digest() != b.digest()


class TestSolve:
    def test_fdm_artifacts(self, tmp_path):
        config = fast_config(tmp_path, solver="fdm")
        assert run_solve(config) == EXIT_OK
        out = Path(config.output_dir)
        header, rows = read_csv(out / "trajectory.csv")
        assert header == ["t", "x", "value"]
        assert len(rows) == 2 * config.n_x  # two sample times
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["scheme"] == "fdm"
        assert manifest["config_hash"] == config.digest()
        assert "trajectory.csv" in manifest["artifacts"]
        assert manifest["derived"]["dx"] == pytest.approx(0.25)

    def test_values_roundtrip_full_precision(self, tmp_path):
        config = fast_config(tmp_path, solver="fdm")
        run_solve(config)
        _, rows = read_csv(Path(config.output_dir) / "trajectory.csv")
        from cls_solver.evolve import TimeGrid, evolve_fdm
        from cls_solver.model import sample_initial

        traj = evolve_fdm(
            config.params(), config.grid(), sample_initial(config.grid()),
            config.time_grid(), config.parsed_sample_times(),
        )
        flat = traj.values_matrix().reshape(-1)
        assert np.array_equal([float(r[2]) for r in rows], flat)

    def test_compare_writes_error_field(self, tmp_path):
        config = fast_config(tmp_path, solver="cls", compare="fdm")
        assert run_solve(config) == EXIT_OK
        out = Path(config.output_dir)
        header, rows = read_csv(out / "error_field.csv")
        assert header == ["t", "x", "abs", "rel"]
        assert all(float(r[2]) >= 0 and float(r[3]) >= 0 for r in rows)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["compare"]["reference"] == "fdm"
        assert all(v < 0.1 for v in manifest["compare"]["l2_rel_error"].values())

    def test_dump_wpt(self, tmp_path):
        config = fast_config(tmp_path, solver="cls", dump_wpt=True)
        assert run_solve(config) == EXIT_OK
        out = Path(config.output_dir)
        header, rows = read_csv(out / "wpt_state.csv")
        assert header == ["t", "p", "x", "value"]
        assert len(rows) == 2 * config.n_p * config.n_x
        manifest = json.loads((out / "manifest.json").read_text())
        assert "wpt_state.csv" in manifest["artifacts"]

    def test_reruns_are_reproducible(self, tmp_path):
        config = fast_config(tmp_path, solver="cl")
        run_solve(config)
        first = json.loads((Path(config.output_dir) / "manifest.json").read_text())
        run_solve(config)
        second = json.loads((Path(config.output_dir) / "manifest.json").read_text())
        assert first["artifacts"] == second["artifacts"]


class TestExitCodes:
    def test_solve_ok(self, tmp_path):
        code = main([
            "solve", "--scheme", "fdm", "--n-x", "4",
            "--t-end", "1e-3", "--n-t", "100",
            "--sample-times", "0.001",
            "--output-dir", str(tmp_path / "out"),
        ])
        assert code == EXIT_OK

    def test_config_error(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("mystery = 1\n")
        assert main(["solve", "--config", str(bad)]) == EXIT_CONFIG

    def test_unstable_cls_exits_diverged(self, tmp_path):
        code = main([
            "solve", "--scheme", "cls", "--n-x", "4", "--k", "2",
            "--p-left", "-2", "--p-right", "2", "--n-p", "16",
            "--t-end", "0.4", "--n-t", "10",  # huge dt
            "--sample-times", "0.4",
            "--output-dir", str(tmp_path / "out"),
        ])
        assert code == EXIT_DIVERGED

    def test_sweep_band_pass_and_fail(self, tmp_path):
        base = [
            "sweep", "--param", "dp", "--values", "32,64,128",
            "--n-x", "4", "--k", "2", "--p-left", "-2", "--p-right", "2",
            "--t-end", "0.01", "--sample-times", "0.01",
        ]
        ok = main(base + ["--output-dir", str(tmp_path / "a")])
        assert ok == EXIT_OK
        off = main(base + ["--band", "5:6", "--output-dir", str(tmp_path / "b")])
        assert off == EXIT_BAND
        header, rows = read_csv(tmp_path / "a" / "convergence.csv")
        assert header == ["param", "error", "slope_fitted"]
        assert len(rows) == 3
        first_line = (tmp_path / "a" / "convergence.csv").read_text().splitlines()[0]
        assert first_line.startswith("# config ")


class TestCheck:
    def test_clean_config(self, tmp_path, capsys):
        config = fast_config(tmp_path)
        assert run_check(config) == EXIT_OK
        text = capsys.readouterr().out
        assert "skew-Hermitian residual" in text

    def test_flagged_config(self, tmp_path):
        config = fast_config(tmp_path, n_t=1, t_end=0.4)
        assert run_check(config) == EXIT_DIVERGED
