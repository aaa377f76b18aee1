"""Tests for the free-surface flow solver.

The divergence oracle below recomputes per-cell net fluxes with explicit
neighbor indexing, independently of the solver's vectorized stencils.
"""

import numpy as np
import pytest

from raceway.errors import (CFLError, ConfigurationError, DryCellError,
                            PressureSolveError)
from raceway.geometry import RacewayGeometry, build_mesh
from raceway.hydro import (FlowState, HydroConfig, PaddlewheelSpec,
                           divergence, kinetic_energy, paddle_force,
                           paddle_region, step_flow, total_volume,
                           update_surface)


def pond_geometry():
    return RacewayGeometry(
        straight_length=20.0, channel_width=2.0,
        inner_radius=0.2, outer_radius=2.2,
    )


def pond_mesh(ns=48, nt=6, nk=6):
    return build_mesh(pond_geometry(), ns, nt, nk)


def aligned_paddle():
    # axis on a streamwise cell center of the 48-cell loop so the forced
    # region is nonempty at coarse resolution
    return PaddlewheelSpec(force_magnitude=10.0, paddle_length=0.4,
                           axis=(4.5, 1.2, 0.5))


def loop_divergence(state):
    """Net outward volume flux per cell, naive loops."""
    mesh = state.mesh
    ns, nt, nk = mesh.n_streamwise, mesh.n_transverse, mesh.n_sigma
    out = np.zeros((ns, nt, nk))
    for i in range(ns):
        for j in range(nt):
            for k in range(nk):
                total = (state.flux_streamwise[i, j, k]
                         - state.flux_streamwise[(i - 1) % ns, j, k])
                total += (state.flux_transverse[i, j + 1, k]
                          - state.flux_transverse[i, j, k])
                total += (state.flux_vertical[i, j, k + 1]
                          - state.flux_vertical[i, j, k])
                out[i, j, k] = total
    return out


def loop_region(paddle, geom, mesh, surface_height):
    """Cell membership recomputed point by point."""
    ns, nt, nk = mesh.n_streamwise, mesh.n_transverse, mesh.n_sigma
    out = np.zeros((ns, nt, nk), dtype=bool)
    for i in range(ns):
        for j in range(nt):
            x1, x2 = mesh.cell_centers_plan[i, j]
            eta = surface_height[i, j]
            for k in range(nk):
                x3 = eta * mesh.sigma_centers[k]
                d2 = (x1 - paddle.axis[0]) ** 2 + (x3 - paddle.axis[2]) ** 2
                out[i, j, k] = (
                    geom.inner_radius <= x2 <= geom.outer_radius
                    and d2 <= paddle.paddle_length**2
                    and x3 < eta
                )
    return out


class TestPaddlewheelSpec:
    def test_blade_length_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            PaddlewheelSpec(paddle_length=0.0)

    def test_axis_must_clear_the_bottom(self):
        with pytest.raises(ConfigurationError):
            PaddlewheelSpec(paddle_length=0.4, axis=(5.0, 1.2, 0.3))


class TestPaddleForce:
    def test_zero_on_the_axis(self):
        paddle = PaddlewheelSpec()
        force = paddle_force(paddle, 0.7, np.array([5.0, 1.2, 0.5]),
                             3.0, True)
        assert np.all(force == 0.0)

    def test_blade_tip_at_time_zero(self):
        # magnitude 10 * 0.5^2 * 0.4^2 = 0.4, all streamwise at t = 0
        paddle = PaddlewheelSpec(force_magnitude=10.0, paddle_length=0.4)
        force = paddle_force(paddle, 0.5, np.array([5.4, 1.2, 0.5]),
                             0.0, True)
        assert np.allclose(force, [0.4, 0.0, 0.0], atol=1e-14)

    def test_zero_outside_the_region(self):
        paddle = PaddlewheelSpec()
        force = paddle_force(paddle, 0.5, np.array([5.4, 1.2, 0.5]),
                             0.0, False)
        assert np.all(force == 0.0)

    def test_magnitude_bound_over_random_points(self):
        """The force never exceeds magnitude * omega^2 * length^2, no
        matter where or when it is evaluated."""
        paddle = aligned_paddle()
        rng = np.random.default_rng(2024)
        n = 100_000
        points = np.empty((n, 3))
        points[:, 0] = rng.uniform(-3.0, 23.0, n)
        points[:, 1] = rng.uniform(-3.0, 3.0, n)
        points[:, 2] = rng.uniform(0.0, 1.0, n)
        t = rng.uniform(0.0, 86400.0, n)
        omega = rng.uniform(0.1, 0.9, n)
        d2 = ((points[:, 0] - paddle.axis[0]) ** 2
              + (points[:, 2] - paddle.axis[2]) ** 2)
        inside = d2 <= paddle.paddle_length**2
        force = paddle_force(paddle, omega, points, t, inside)
        norms = np.linalg.norm(force, axis=-1)
        bound = (paddle.force_magnitude * omega**2
                 * paddle.paddle_length**2)
        assert np.all(norms <= bound * (1.0 + 1e-12))
        assert np.all(norms[~inside] == 0.0)


class TestPaddleRegion:
    def test_cell_on_the_axis_is_included(self):
        mesh = pond_mesh()
        # depth chosen so a sigma center lands on the axis height
        height = 0.5 * 12.0 / 11.0
        eta = np.full((48, 6), height)
        region = paddle_region(aligned_paddle(), pond_geometry(), mesh, eta)
        i = int(np.argmin(np.abs(mesh.cell_centers_plan[:, 0, 0] - 4.5)))
        assert region[i, :, 5].all()

    def test_far_cells_are_excluded(self):
        mesh = pond_mesh()
        eta = np.full((48, 6), 0.3)
        region = paddle_region(aligned_paddle(), pond_geometry(), mesh, eta)
        x1 = mesh.cell_centers_plan[:, :, 0]
        far = np.abs(x1 - 4.5) > 0.45
        assert not region[far, :].any()

    def test_matches_pointwise_oracle(self):
        mesh = pond_mesh(24, 4, 4)
        geom = pond_geometry()
        rng = np.random.default_rng(7)
        for _ in range(5):
            paddle = PaddlewheelSpec(
                force_magnitude=10.0,
                paddle_length=rng.uniform(0.2, 0.6),
                axis=(rng.uniform(0.0, 20.0), 1.2, rng.uniform(0.6, 1.0)),
            )
            eta = rng.uniform(0.2, 0.8, (24, 4))
            got = paddle_region(paddle, geom, mesh, eta)
            want = loop_region(paddle, geom, mesh, eta)
            assert np.array_equal(got, want)


class TestFlowState:
    def test_at_rest_rejects_dry_start(self):
        with pytest.raises(DryCellError):
            FlowState.at_rest(pond_mesh(24, 4, 4), 0.0)

    def test_from_fields_flux_boundaries(self):
        mesh = pond_mesh(24, 4, 4)
        rng = np.random.default_rng(3)
        velocity = rng.normal(size=(3, 24, 4, 4))
        eta = rng.uniform(0.2, 0.4, (24, 4))
        state = FlowState.from_fields(mesh, velocity, np.zeros((24, 4, 4)),
                                      eta)
        assert np.all(state.flux_transverse[:, 0] == 0.0)
        assert np.all(state.flux_transverse[:, -1] == 0.0)
        assert np.all(state.flux_vertical[:, :, 0] == 0.0)
        top = velocity[2, :, :, -1] * mesh.plan_cell_areas
        assert np.allclose(state.flux_vertical[:, :, -1], top, rtol=1e-13)

    def test_uniform_flow_is_divergence_free_away_from_walls(self):
        # the mesh closes each cell's face loop, so a constant plan
        # velocity under a flat surface transports no net volume through
        # cells whose lateral faces are all interior; wall rows see the
        # no-penetration condition eat the wall-normal component
        mesh = pond_mesh(24, 4, 4)
        velocity = np.zeros((3, 24, 4, 4))
        velocity[0] = 0.35
        velocity[1] = -0.2
        state = FlowState.from_fields(mesh, velocity, np.zeros((24, 4, 4)),
                                      np.full((24, 4), 0.3))
        div = loop_divergence(state)
        assert np.abs(div[:, 1:-1, :]).max() < 1e-13


class TestRestState:
    def test_rest_is_an_exact_fixed_point(self):
        """With zero force magnitude nothing may move, bit for bit."""
        mesh = pond_mesh()
        cfg = HydroConfig()
        paddle = PaddlewheelSpec(force_magnitude=0.0, paddle_length=0.4,
                                 axis=(4.5, 1.2, 0.5))
        state = FlowState.at_rest(mesh, 0.3)
        for _ in range(1000):
            state = step_flow(state, cfg, paddle, 0.7)
        assert np.all(state.velocity == 0.0)
        assert np.all(state.surface_height == 0.3)
        assert np.all(state.pressure == 0.0)
        assert kinetic_energy(state) == 0.0


class TestStepFlow:
    def test_paddle_injects_kinetic_energy(self):
        mesh = pond_mesh()
        cfg = HydroConfig()
        state = FlowState.at_rest(mesh, 0.3)
        for _ in range(10):
            state = step_flow(state, cfg, aligned_paddle(), 0.4)
        assert kinetic_energy(state) > 0.0

    def test_divergence_against_loop_oracle(self):
        mesh = pond_mesh()
        cfg = HydroConfig()
        state = FlowState.at_rest(mesh, 0.3)
        vol0 = total_volume(state)
        for _ in range(20):
            state = step_flow(state, cfg, aligned_paddle(), 0.5)
            div = loop_divergence(state)
            heights = state.surface_height / mesh.n_sigma
            vols = (mesh.plan_cell_areas * heights)[:, :, None]
            frac = np.abs(div) * cfg.dt / vols
            assert frac.max() <= cfg.div_tol
            assert np.allclose(div, divergence(state), atol=1e-15)
        assert kinetic_energy(state) > 0.0  # the check is not vacuous
        assert abs(total_volume(state) - vol0) / vol0 < 1e-12

    def test_volume_is_conserved_through_waves(self):
        mesh = pond_mesh()
        cfg = HydroConfig()
        state = FlowState.at_rest(mesh, 0.25)
        vol0 = total_volume(state)
        for _ in range(200):
            state = step_flow(state, cfg, aligned_paddle(), 0.8)
        assert abs(total_volume(state) - vol0) / vol0 < 1e-12
        assert state.surface_height.min() > 0.0

    def test_flux_average_reproduces_surface_change(self):
        # stored fluxes are substep averages; pushing the previous
        # surface through update_surface must land on the new surface
        mesh = pond_mesh()
        cfg = HydroConfig()
        state = FlowState.at_rest(mesh, 0.3)
        for _ in range(25):
            state = step_flow(state, cfg, aligned_paddle(), 0.6)
        replayed = update_surface(state.surface_height_prev, state, cfg.dt)
        assert np.allclose(replayed, state.surface_height,
                           rtol=1e-12, atol=1e-14)

    def test_deterministic_given_identical_inputs(self):
        mesh = pond_mesh()
        cfg = HydroConfig()
        runs = []
        for _ in range(2):
            state = FlowState.at_rest(mesh, 0.3)
            for _ in range(30):
                state = step_flow(state, cfg, aligned_paddle(), 0.4)
            runs.append(state)
        assert kinetic_energy(runs[0]) > 0.0
        assert np.array_equal(runs[0].velocity, runs[1].velocity)
        assert np.array_equal(runs[0].surface_height,
                              runs[1].surface_height)

    def test_too_few_substeps_raises_cfl_error(self):
        mesh = pond_mesh()
        cfg = HydroConfig(max_substeps=1)
        state = FlowState.at_rest(mesh, 0.3)
        with pytest.raises(CFLError) as info:
            step_flow(state, cfg, aligned_paddle(), 0.4)
        assert 0.0 < info.value.suggested_dt < cfg.dt

    def test_projection_iteration_budget_is_enforced(self):
        mesh = pond_mesh()
        cfg = HydroConfig(pressure_max_iters=0)
        state = FlowState.at_rest(mesh, 0.3)
        with pytest.raises(PressureSolveError):
            step_flow(state, cfg, aligned_paddle(), 0.4)

    @pytest.mark.slow
    def test_long_run_kinetic_energy_stays_bounded(self):
        mesh = pond_mesh()
        cfg = HydroConfig()
        state = FlowState.at_rest(mesh, 0.3)
        energies = []
        for _ in range(2000):
            state = step_flow(state, cfg, aligned_paddle(), 0.4)
            energies.append(kinetic_energy(state))
        early = max(energies[500:1000])
        late = max(energies[1500:])
        assert early > 0.0
        assert np.isfinite(late)
        assert late < 3.0 * early


class TestUpdateSurface:
    def test_zero_velocity_leaves_surface_alone(self):
        mesh = pond_mesh(24, 4, 4)
        state = FlowState.at_rest(mesh, 0.3)
        eta = update_surface(state.surface_height, state, 0.5)
        assert np.array_equal(eta, state.surface_height)

    def test_uniform_upwelling_raises_surface_linearly(self):
        mesh = pond_mesh(24, 4, 4)
        velocity = np.zeros((3, 24, 4, 4))
        velocity[2] = 0.01
        flat = np.full((24, 4), 0.3)
        state = FlowState.from_fields(mesh, velocity, np.zeros((24, 4, 4)),
                                      flat)
        eta = update_surface(flat, state, 0.5)
        assert np.allclose(eta, 0.3 + 0.01 * 0.5, rtol=1e-14)

    def test_draining_a_column_dry_is_an_error(self):
        mesh = pond_mesh(24, 4, 4)
        velocity = np.zeros((3, 24, 4, 4))
        velocity[2] = -0.01
        flat = np.full((24, 4), 0.3)
        state = FlowState.from_fields(mesh, velocity, np.zeros((24, 4, 4)),
                                      flat)
        with pytest.raises(DryCellError):
            update_surface(flat, state, 40.0)
