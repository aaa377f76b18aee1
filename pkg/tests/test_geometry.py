"""Geometry and mesh checks.

The plan-area oracle is a seeded Monte Carlo hit count over the bounding
box, written against contains_plan only, so it stays independent of the
closed-form area and of the mesh construction.
"""

import numpy as np
import pytest

from raceway.errors import ConfigurationError
from raceway.geometry import (
    RacewayGeometry,
    build_mesh,
    centerline_length,
    contains_plan,
    mesh_summary,
    plan_area,
    validate_geometry,
)


def pond_geometry():
    return RacewayGeometry(
        straight_length=20.0, channel_width=2.0,
        inner_radius=0.2, outer_radius=2.2,
    )


def monte_carlo_area(geom, n_samples=10_000_000, seed=20240817):
    """Hit-count estimate of the plan area from contains_plan alone."""
    rng = np.random.default_rng(seed)
    L, R = geom.straight_length, geom.outer_radius
    x1 = rng.uniform(-R, L + R, n_samples)
    x2 = rng.uniform(-R, R, n_samples)
    box = (L + 2.0 * R) * (2.0 * R)
    return box * np.count_nonzero(contains_plan(geom, x1, x2)) / n_samples


class TestPlanArea:
    def test_pond_value(self):
        # 2*20*2 + pi*(2.2^2 - 0.2^2)
        assert plan_area(pond_geometry()) == pytest.approx(95.0796, abs=1e-3)

    def test_degenerate_oval_is_a_disk(self):
        geom = RacewayGeometry(0.0, 1.3, 0.0, 1.3)
        assert plan_area(geom) == pytest.approx(np.pi * 1.3**2, rel=1e-14)

    def test_monte_carlo_oracle_pond(self):
        geom = pond_geometry()
        assert monte_carlo_area(geom) == pytest.approx(plan_area(geom), rel=1e-3)

    def test_monte_carlo_oracle_other_shape(self):
        geom = RacewayGeometry(7.3, 1.1, 0.45, 1.55)
        assert monte_carlo_area(geom) == pytest.approx(plan_area(geom), rel=1e-3)


class TestContainsPlan:
    def test_examples(self):
        geom = pond_geometry()
        assert contains_plan(geom, 10.0, 1.2)          # mid-width, left straight
        assert contains_plan(geom, 10.0, -1.2)         # right straight
        assert not contains_plan(geom, 10.0, 0.0)      # inner island
        assert not contains_plan(geom, -3.0, 0.0)      # beyond the left bend
        assert contains_plan(geom, -1.2, 0.0)          # inside the left bend
        assert contains_plan(geom, 21.2, 0.0)          # inside the right bend

    def test_boundary_points_count_as_inside(self):
        geom = pond_geometry()
        assert contains_plan(geom, 0.0, 0.2)
        assert contains_plan(geom, 20.0, 2.2)
        assert contains_plan(geom, 10.0, -0.2)
        assert contains_plan(geom, -2.2, 0.0)

    def test_reflection_symmetry_across_long_axis(self):
        geom = pond_geometry()
        rng = np.random.default_rng(7)
        x1 = rng.uniform(-3.0, 23.0, 20000)
        x2 = rng.uniform(-3.0, 3.0, 20000)
        np.testing.assert_array_equal(
            contains_plan(geom, x1, x2), contains_plan(geom, x1, -x2)
        )


class TestValidation:
    def test_radius_identity_enforced(self):
        geom = RacewayGeometry(20.0, 2.0, 0.2, 2.5)
        with pytest.raises(ConfigurationError):
            validate_geometry(geom)

    def test_positive_dimensions_enforced(self):
        with pytest.raises(ConfigurationError):
            validate_geometry(RacewayGeometry(-1.0, 2.0, 0.2, 2.2))
        with pytest.raises(ConfigurationError):
            validate_geometry(RacewayGeometry(20.0, 2.0, 0.0, 2.0))


class TestBuildMesh:
    def test_counts_and_area(self):
        mesh = build_mesh(pond_geometry(), 48, 6, 6)
        assert mesh.plan_cell_areas.shape == (48, 6)
        assert mesh.cell_centers_plan.shape == (48, 6, 2)
        # exact sector/rectangle areas sum to the closed form
        assert mesh.total_plan_area == pytest.approx(
            plan_area(pond_geometry()), rel=1e-9
        )
        assert mesh.total_plan_area == pytest.approx(95.08, rel=0.02)

    def test_area_consistency_fine_and_coarse(self):
        geom = pond_geometry()
        for ns, nt in ((96, 8), (192, 12), (4, 2)):
            mesh = build_mesh(geom, ns, nt, 2)
            assert mesh.total_plan_area == pytest.approx(plan_area(geom), rel=1e-9)

    def test_centerline_length_value(self):
        geom = pond_geometry()
        assert centerline_length(geom) == pytest.approx(
            2 * 20.0 + 2 * np.pi * 1.2, rel=1e-14
        )
        assert centerline_length(geom) == pytest.approx(47.540, abs=5e-4)

    def test_centerline_cross_check_from_cell_lengths(self):
        # mean of the two rows straddling mid-width sums to the centerline
        mesh = build_mesh(pond_geometry(), 48, 6, 6)
        jm = mesh.n_transverse // 2
        row = 0.5 * (
            mesh.streamwise_cell_lengths[:, jm - 1]
            + mesh.streamwise_cell_lengths[:, jm]
        )
        assert row.sum() == pytest.approx(mesh.centerline_length, rel=1e-12)

    def test_cell_centers_lie_inside(self):
        for counts in ((48, 6, 6), (24, 4, 4), (8, 2, 2)):
            mesh = build_mesh(pond_geometry(), *counts)
            c = mesh.cell_centers_plan.reshape(-1, 2)
            assert contains_plan(pond_geometry(), c[:, 0], c[:, 1]).all()

    def test_face_area_vectors_close_per_cell(self):
        # sum of outward area vectors over each plan cell boundary is zero
        mesh = build_mesh(pond_geometry(), 48, 6, 6)
        s_vec = mesh.face_normals_streamwise * mesh.face_lengths_streamwise[..., None]
        t_vec = mesh.face_normals_transverse * mesh.face_lengths_transverse[..., None]
        closure = (
            s_vec - np.roll(s_vec, 1, axis=0)
            + t_vec[:, 1:] - t_vec[:, :-1]
        )
        assert np.abs(closure).max() < 1e-12

    def test_spacings_positive_and_periodic(self):
        mesh = build_mesh(pond_geometry(), 24, 4, 4)
        assert (mesh.spacing_streamwise > 0).all()
        assert (mesh.spacing_transverse > 0).all()
        # walking the streamwise neighbors visits every index once
        seen = set()
        i = 0
        for _ in range(mesh.n_streamwise):
            seen.add(i)
            i = (i + 1) % mesh.n_streamwise
        assert i == 0 and len(seen) == mesh.n_streamwise

    def test_segment_junctions_line_up(self):
        # the far corner of each cell equals the near corner of the next
        mesh = build_mesh(pond_geometry(), 48, 6, 6)
        fwd = mesh.plan_cell_corners[:, :, (1, 2), :]
        nxt = np.roll(mesh.plan_cell_corners[:, :, (0, 3), :], -1, axis=0)
        assert np.abs(fwd - nxt).max() < 1e-12

    def test_count_validation(self):
        geom = pond_geometry()
        with pytest.raises(ConfigurationError):
            build_mesh(geom, 47, 6, 6)
        with pytest.raises(ConfigurationError):
            build_mesh(geom, 2, 6, 6)
        with pytest.raises(ConfigurationError):
            build_mesh(geom, 48, 1, 6)
        with pytest.raises(ConfigurationError):
            build_mesh(geom, 48, 6, 1)

    def test_summary_mentions_counts(self):
        text = mesh_summary(build_mesh(pond_geometry(), 48, 6, 6))
        assert "48" in text and "centerline" in text
