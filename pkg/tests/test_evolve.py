import numpy as np
import pytest
import scipy.sparse as sp

from cls_solver.carleman import assemble_carleman, lift_state
from cls_solver.evolve import (
    DivergenceError,
    StabilityError,
    TimeGrid,
    Trajectory,
    align_step_count,
    assemble_step,
    evolve_cl,
    evolve_cls,
    evolve_fdm,
    exact_expm_evolve,
    stability_check,
    step_cls,
    suggest_dt,
)
from cls_solver.model import (
    FieldState,
    ReactionDiffusionParams,
    SpatialGrid1D,
    build_polynomial_system,
)
from cls_solver.wpt import (
    build_aux_grid,
    hermitian_split,
    initialize_wpt_state,
)

LOGISTIC = ReactionDiffusionParams(D=0.0, Q=1.0, R=-1.0)
SCALAR_GRID = SpatialGrid1D(1.0, 1, "left_offset")


def logistic_exact(t, phi0=0.5):
    return phi0 / (phi0 + (1.0 - phi0) * np.exp(-t))


class TestTimeGrid:
    def test_dt(self):
        assert TimeGrid(0.4, 400_000).dt == pytest.approx(1e-6)

    def test_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(1.0, 0)
        with pytest.raises(ValueError):
            TimeGrid(-1.0, 10)


class TestAlignStepCount:
    def test_rounds_up_to_sample_multiple(self):
        assert align_step_count(0.4, 7, [0.1, 0.2, 0.3, 0.4]) == 8

    def test_no_change_when_aligned(self):
        assert align_step_count(0.4, 400_000, [0.1, 0.2, 0.3, 0.4]) == 400_000

    def test_thirds(self):
        n_t = align_step_count(0.3, 100, [0.1, 0.3])
        dt = 0.3 / n_t
        assert round(0.1 / dt) * dt == pytest.approx(0.1, rel=1e-12)


class TestStepOperator:
    def setup_method(self):
        system = build_polynomial_system(LOGISTIC, SCALAR_GRID)
        op = assemble_carleman(system, K=2)
        self.split = hermitian_split(op.matrix)
        self.aux = build_aux_grid(-1.0, 1.0, 8)
        self.time = TimeGrid(0.01, 100)
        self.index_map = op.index_map

    def test_update_matrices(self):
        step = assemble_step(self.split, self.time, self.aux)
        ratio = self.time.dt / self.aux.dp
        h1 = self.split.h1.toarray()
        ih2 = self.split.i_h2.toarray()
        assert np.allclose(step.b1.toarray(), -h1 * ratio)
        assert np.allclose(
            step.b2.toarray(), np.eye(2) + h1 * ratio + ih2 * self.time.dt
        )

    def test_step_matches_blockwise_formula(self):
        step = assemble_step(self.split, self.time, self.aux)
        phi = lift_state(FieldState(0.0, np.array([0.5])), K=2)
        psi = initialize_wpt_state(phi, self.aux)
        out = step_cls(psi, step)
        blocks = psi.values.reshape(self.aux.n_p, 2)
        b1, b2 = step.b1.toarray(), step.b2.toarray()
        for j in range(self.aux.n_p):
            expected = b1 @ blocks[(j + 1) % self.aux.n_p] + b2 @ blocks[j]
            got = out.values.reshape(self.aux.n_p, 2)[j]
            assert np.allclose(got, expected, rtol=1e-13)
        assert out.time == pytest.approx(psi.time + step.dt)

    def test_step_matches_materialized_circulant(self):
        step = assemble_step(self.split, self.time, self.aux)
        rng = np.random.default_rng(21)
        full = step.full()
        values = rng.standard_normal(self.aux.n_p * 2)
        from cls_solver.wpt import WptState

        psi = WptState(0.0, values, self.aux.n_p, self.index_map)
        assert np.allclose(step_cls(psi, step).values, full @ values, rtol=1e-12)

    def test_dimension_mismatch(self):
        step = assemble_step(self.split, self.time, self.aux)
        phi = lift_state(FieldState(0.0, np.array([0.5])), K=3)
        psi = initialize_wpt_state(phi, self.aux)
        with pytest.raises(ValueError):
            step_cls(psi, step)


class TestTrajectory:
    def test_alignment_checked(self):
        with pytest.raises(ValueError):
            Trajectory(times=[0.0, 0.1], states=[None])

    def test_monotonic_times(self):
        s = FieldState(0.0, np.zeros(2))
        with pytest.raises(ValueError):
            Trajectory(times=[0.1, 0.1], states=[s, s])


class TestFdm:
    def test_scalar_logistic(self):
        traj = evolve_fdm(
            LOGISTIC, SCALAR_GRID, FieldState(0.0, np.array([0.5])),
            TimeGrid(1.0, 100_000), sample_times=[0.5, 1.0],
        )
        for t, state in zip(traj.times, traj.states):
            assert state.values[0] == pytest.approx(logistic_exact(t), abs=2e-6)

    def test_linear_case_matches_expm(self):
        params = ReactionDiffusionParams(D=1.0, Q=0.5, R=0.0)
        grid = SpatialGrid1D(1.0, 8)
        system = build_polynomial_system(params, grid)
        phi0 = np.linspace(0.1, 0.9, 8)
        traj = evolve_fdm(
            params, grid, FieldState(0.0, phi0), TimeGrid(0.05, 50_000)
        )
        exact = exact_expm_evolve(system.f1, phi0, 0.05)
        assert np.allclose(traj.states[-1].values, exact, rtol=5e-4)

    def test_includes_initial_sample(self):
        traj = evolve_fdm(
            LOGISTIC, SCALAR_GRID, FieldState(0.0, np.array([0.5])),
            TimeGrid(0.1, 100), sample_times=[0.0, 0.1],
        )
        assert traj.times[0] == 0.0
        assert traj.states[0].values[0] == 0.5

    def test_sample_time_outside_range(self):
        with pytest.raises(ValueError):
            evolve_fdm(
                LOGISTIC, SCALAR_GRID, FieldState(0.0, np.array([0.5])),
                TimeGrid(0.1, 100), sample_times=[0.2],
            )

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_detected(self):
        params = ReactionDiffusionParams(D=1.0, Q=0.0, R=0.0)
        grid = SpatialGrid1D(1.0, 16)
        with pytest.raises(DivergenceError):
            evolve_fdm(
                params, grid, FieldState(0.0, np.ones(16)), TimeGrid(100.0, 1000)
            )


class TestCl:
    def test_linear_case_equals_fdm(self):
        # with R = 0 the lifted blocks decouple and the physical block runs
        # the same Euler iteration as the direct scheme
        params = ReactionDiffusionParams(D=1.0, Q=-0.5, R=0.0)
        grid = SpatialGrid1D(1.0, 5)
        system = build_polynomial_system(params, grid)
        phi0 = FieldState(0.0, np.linspace(0.2, 0.8, 5))
        op = assemble_carleman(system, K=3)
        tg = TimeGrid(0.02, 2000)
        cl = evolve_cl(op, lift_state(phi0, 3), tg, grid=grid)
        fdm = evolve_fdm(params, grid, phi0, tg)
        assert np.allclose(cl.states[-1].values, fdm.states[-1].values, rtol=1e-12)

    def test_scalar_logistic_truncation_improves_with_order(self):
        system = build_polynomial_system(LOGISTIC, SCALAR_GRID)
        phi0 = FieldState(0.0, np.array([0.5]))
        tg = TimeGrid(0.2, 20_000)
        exact = logistic_exact(0.2)
        errors = []
        for K in (1, 2, 3, 4):
            op = assemble_carleman(system, K)
            traj = evolve_cl(op, lift_state(phi0, K), tg)
            errors.append(abs(traj.states[-1].values[0] - exact))
        assert errors[0] > errors[1] > errors[2] > errors[3]
        assert errors[2] < 1e-3

    def test_node_coords_passthrough(self):
        system = build_polynomial_system(LOGISTIC, SCALAR_GRID)
        op = assemble_carleman(system, K=2)
        traj = evolve_cl(
            op, lift_state(FieldState(0.0, np.array([0.5])), 2),
            TimeGrid(0.01, 10), grid=SCALAR_GRID,
        )
        assert np.allclose(traj.node_coords, SCALAR_GRID.node_coords)


class TestCls:
    def test_pre_pollution_decay_is_exact(self):
        # decay problem d phi/dt = -phi: the warped profile is an exact
        # eigenvector of the upwind stencil, so until the wrap reaches the
        # recovery node the recovered value is phi0 * (1 - c*dt)^n with
        # c = (1 - exp(-dp))/dp
        params = ReactionDiffusionParams(D=0.0, Q=-1.0, R=0.0)
        aux = build_aux_grid(-1.0, 1.0, 20)
        n_t = 8  # keeps the domain of dependence short of the wrap
        tg = TimeGrid(8e-3, n_t)
        traj = evolve_cls(params, SCALAR_GRID, aux, tg, K=1,
                          phi0=FieldState(0.0, np.array([0.5])))
        c = (1.0 - np.exp(-aux.dp)) / aux.dp
        expected = 0.5 * (1.0 - c * tg.dt) ** n_t
        assert traj.states[-1].values[0] == pytest.approx(expected, rel=1e-13)

    def test_tracks_reference_on_desk_problem(self):
        params = ReactionDiffusionParams(D=1.0, Q=1.0, R=-1.0)
        grid = SpatialGrid1D(1.0, 8)
        aux = build_aux_grid(-10.0, 10.0, 128)
        tg = TimeGrid(0.01, 10_000)
        cls_traj = evolve_cls(params, grid, aux, tg, K=2)
        from cls_solver.model import sample_initial

        fdm_traj = evolve_fdm(params, grid, sample_initial(grid), tg)
        a, b = cls_traj.states[-1].values, fdm_traj.states[-1].values
        rel = np.linalg.norm(a - b) / np.linalg.norm(b)
        assert rel < 0.02

    def test_unstable_step_refused(self):
        params = ReactionDiffusionParams(D=1.0, Q=1.0, R=-1.0)
        grid = SpatialGrid1D(1.0, 8)
        aux = build_aux_grid(-10.0, 10.0, 128)
        with pytest.raises(StabilityError):
            evolve_cls(params, grid, aux, TimeGrid(0.4, 100), K=2)

    def test_keep_wpt_snapshots(self):
        params = ReactionDiffusionParams(D=0.0, Q=-1.0, R=0.0)
        aux = build_aux_grid(-1.0, 1.0, 16)
        traj = evolve_cls(params, SCALAR_GRID, aux, TimeGrid(1e-3, 10), K=1,
                          keep_wpt=True, sample_times=[0.0, 1e-3])
        snaps = traj.metadata["wpt_snapshots"]
        assert len(snaps) == 2
        t0, w0 = snaps[0]
        assert t0 == 0.0
        assert w0.shape == (16, 1)
        # initial warped field carries the exp(-|p|) weights
        phi0 = traj.states[0].values[0]
        assert np.allclose(w0[:, 0], phi0 * np.exp(-np.abs(aux.node_coords)))


class TestExactPropagator:
    def test_scalar_decay(self):
        out = exact_expm_evolve(np.array([[-2.0]]), np.array([1.0]), 0.5)
        assert out[0] == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_residual_check_passes(self):
        rng = np.random.default_rng(30)
        g = rng.standard_normal((6, 6)) * 0.5
        v = rng.standard_normal(6)
        out = exact_expm_evolve(g, v, 0.3, check_residual=True)
        assert np.all(np.isfinite(out))

    def test_dimension_cap(self):
        g = sp.identity(10, format="csr")
        with pytest.raises(ValueError):
            exact_expm_evolve(g, np.ones(10), 1.0, max_dim=5)


class TestStability:
    def make(self, dt, n_t=None):
        params = ReactionDiffusionParams(D=1.0, Q=1.0, R=-1.0)
        grid = SpatialGrid1D(1.0, 8)
        aux = build_aux_grid(-5.0, 5.0, 64)
        system = build_polynomial_system(params, grid)
        split = hermitian_split(assemble_carleman(system, 2).matrix)
        steps = n_t if n_t is not None else max(1, int(round(1.0 / dt)))
        return params, grid, aux, TimeGrid(steps * dt, steps), split

    def test_small_step_clean(self):
        report = stability_check(*self.make(1e-6))
        assert report.ok
        assert report.diffusion_number < 1.0
        assert report.advection_number < 1.0
        assert report.spectral_radius <= 1.0 + 1e-9

    def test_large_step_flagged(self):
        report = stability_check(*self.make(0.1, n_t=10))
        assert not report.ok
        assert any("diffusion" in f for f in report.flags)

    def test_suggest_dt(self):
        aux = build_aux_grid(-5.0, 5.0, 64)
        assert suggest_dt(4.0, aux, margin=10.0) == pytest.approx(
            aux.dp / 40.0
        )

    def test_suggest_dt_rejects_zero_norm(self):
        with pytest.raises(ValueError):
            suggest_dt(0.0, build_aux_grid(-1.0, 1.0, 4))
