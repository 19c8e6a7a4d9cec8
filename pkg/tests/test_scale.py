"""Tests for marker-based metric scale recovery."""

import numpy as np
import pytest

from meshforge.errors import (
    BehindCamera,
    DegenerateConfiguration,
    DegenerateReconPoint,
    EmptyInput,
    NonPositiveScale,
    RayMiss,
)
from meshforge.fields import AnalyticField, BoxShape, PosedScaledField, Sphere, Union
from meshforge.geometry import (
    CameraIntrinsics,
    MarkerSpec,
    Pose,
    marker_corners_3d,
    project,
    rotation_about,
)
from meshforge.mesher import MeshingConfig, marching_cubes
from meshforge.scale import (
    MarkerObservation,
    ScaleEstimate,
    apply_scale,
    estimate_scale,
    metric_marker_point,
    recon_marker_point,
    scale_pair_for_observation,
)


@pytest.fixture
def intr() -> CameraIntrinsics:
    return CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0,
                            width=640, height=480)


class TestMetricMarkerPoint:
    def test_anchor_at_board_origin(self, intr):
        spec = MarkerSpec(rows=5, cols=7, square_size=0.05)
        corners = marker_corners_3d(spec)
        board_pose = Pose(np.eye(3), np.array([-0.15, -0.1, 0.5]))
        uv = project(intr, board_pose.apply(corners))
        obs = MarkerObservation(frame_id=0, corners2d=uv, spec=spec)
        got = metric_marker_point(obs, intr)
        np.testing.assert_allclose(got, board_pose.t, atol=1e-6)

    def test_rotated_board_nonzero_anchor(self, intr):
        # Oracle: the synthetic generator's own forward transform.
        spec = MarkerSpec(rows=5, cols=7, square_size=0.05, anchor_index=1)
        corners = marker_corners_3d(spec)
        r = rotation_about(np.array([1.0, 0.2, 0.0]), 0.4)
        board_pose = Pose(r, np.array([-0.1, -0.05, 0.8]) - r @ corners.mean(axis=0))
        uv = project(intr, board_pose.apply(corners))
        obs = MarkerObservation(frame_id=3, corners2d=uv, spec=spec)
        got = metric_marker_point(obs, intr)
        expected = board_pose.apply(np.array([0.05, 0.0, 0.0]))
        np.testing.assert_allclose(got, expected, atol=1e-6)

    def test_shuffled_corners_rejected(self, intr):
        rng = np.random.default_rng(0)
        spec = MarkerSpec(rows=5, cols=7, square_size=0.05)
        corners = marker_corners_3d(spec)
        board_pose = Pose(np.eye(3), np.array([-0.15, -0.1, 0.5]))
        uv = project(intr, board_pose.apply(corners))
        obs = MarkerObservation(frame_id=0, corners2d=uv[rng.permutation(len(uv))],
                                spec=spec)
        with pytest.raises((DegenerateConfiguration, BehindCamera)):
            metric_marker_point(obs, intr)

    def test_corner_count_validation(self, intr):
        spec = MarkerSpec(rows=5, cols=7, square_size=0.05)
        with pytest.raises(ValueError):
            MarkerObservation(frame_id=0, corners2d=np.zeros((4, 2)), spec=spec)


class TestReconMarkerPoint:
    def test_axial_sphere_hit(self, intr):
        f = AnalyticField(Sphere(np.zeros(3), 0.4))
        cam = Pose(np.eye(3), np.array([0.0, 0.0, -2.0]))
        got = recon_marker_point(f, intr, cam, np.array([320.0, 240.0]))
        np.testing.assert_allclose(got, [0.0, 0.0, 1.6], atol=1e-6)

    def test_off_axis_matches_quadratic_oracle(self, intr):
        f = AnalyticField(Sphere(np.zeros(3), 0.4))
        cam = Pose(np.eye(3), np.array([0.0, 0.0, -2.0]))
        pixel = np.array([380.0, 260.0])
        got = recon_marker_point(f, intr, cam, pixel)
        d = np.array([(380.0 - 320.0) / 600.0, (260.0 - 240.0) / 600.0, 1.0])
        d /= np.linalg.norm(d)
        oc = cam.t
        b = 2 * np.dot(oc, d)
        c = np.dot(oc, oc) - 0.16
        t_hit = (-b - np.sqrt(b * b - 4 * c)) / 2
        expected_world = cam.t + t_hit * d
        np.testing.assert_allclose(got, cam.invert().apply(expected_world), atol=1e-6)

    def test_miss_raises(self, intr):
        f = AnalyticField(Sphere(np.zeros(3), 0.4))
        cam = Pose(np.eye(3), np.array([0.0, 0.0, -2.0]))
        with pytest.raises(RayMiss):
            recon_marker_point(f, intr, cam, np.array([0.0, 0.0]))


class TestEstimateScale:
    def test_single_pair(self):
        est = estimate_scale([(np.array([0.0, 0, 0.5]), np.array([0.0, 0, 0.25]))])
        assert est.per_frame == ((0, 2.0),)
        assert est.mean_scale == 2.0

    def test_identity(self):
        p = np.array([0.3, -0.2, 0.9])
        est = estimate_scale([(p, p)])
        assert est.mean_scale == 1.0

    def test_mean_of_two(self):
        est = estimate_scale([
            (np.array([0.0, 0, 1.0]), np.array([0.0, 0, 0.5])),
            (np.array([0.0, 0, 2.0]), np.array([0.0, 0, 0.5])),
        ], frame_ids=[4, 9])
        assert est.per_frame == ((4, 2.0), (9, 4.0))
        assert est.mean_scale == 3.0

    def test_homogeneity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = rng.normal(size=3)
            s = rng.uniform(0.1, 10)
            est = estimate_scale([(s * p, p)])
            assert est.mean_scale == pytest.approx(s, rel=1e-12)

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            estimate_scale([])

    def test_degenerate_recon_point(self):
        with pytest.raises(DegenerateReconPoint):
            estimate_scale([(np.ones(3), np.zeros(3))])

    def test_mean_invariant_enforced(self):
        with pytest.raises(ValueError):
            ScaleEstimate(per_frame=((0, 2.0), (1, 4.0)), mean_scale=2.5)


class TestApplyScale:
    def sphere_mesh(self):
        f = AnalyticField(Sphere(np.zeros(3), 1.0))
        return marching_cubes(f, MeshingConfig((32, 32, 32), [-1.3] * 3, [1.3] * 3))

    def test_identity_scale(self):
        mesh = self.sphere_mesh()
        out = apply_scale(mesh, 1.0)
        np.testing.assert_array_equal(out.vertices, mesh.vertices)
        np.testing.assert_array_equal(out.faces, mesh.faces)

    def test_double_radius(self):
        mesh = self.sphere_mesh()
        out = apply_scale(mesh, 2.0)
        radii = np.linalg.norm(out.vertices, axis=1)
        assert abs(radii.mean() - 2.0) < 0.02

    def test_composition(self):
        mesh = self.sphere_mesh()
        a = apply_scale(apply_scale(mesh, 1.7), 0.3)
        b = apply_scale(mesh, 1.7 * 0.3)
        assert np.abs(a.vertices - b.vertices).max() < 1e-12

    def test_rejects_nonpositive(self):
        with pytest.raises(NonPositiveScale):
            apply_scale(self.sphere_mesh(), 0.0)


def make_scale_scene(rho: float, grid_dims=None):
    """Metric scene (sphere + table slab + marker) and its reconstruction.

    The reconstruction space is the metric world scaled by 1/rho, so the
    recovered scale must equal rho. Returns (field, intr, recon_pose, obs).
    """
    intr = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0,
                            width=640, height=480)
    spec = MarkerSpec(rows=4, cols=5, square_size=0.06)
    corners = marker_corners_3d(spec)

    # Metric world: table top is the plane z = 0; board flat on the table.
    board_to_world = Pose(np.eye(3), np.array([0.25, -0.05, 0.0]))
    sphere = Sphere(np.array([0.0, 0.0, 0.18]), 0.15)
    table = BoxShape(np.array([0.0, 0.0, -0.25]), np.array([1.2, 1.2, 0.25]))
    metric_field = AnalyticField(Union((sphere, table)))

    # Camera looks down at the scene from the front (+y side, tilted down).
    cam_r = rotation_about(np.array([1.0, 0.0, 0.0]), np.deg2rad(140))
    cam_t = np.array([0.05, 0.85, 0.75])
    cam_metric = Pose(cam_r, cam_t)

    uv = project(intr, cam_metric.invert().apply(board_to_world.apply(corners)))
    obs = MarkerObservation(frame_id=0, corners2d=uv, spec=spec)

    # Reconstruction space = metric / rho.
    recon_field = PosedScaledField(metric_field, Pose.identity(), 1.0 / rho)
    recon_pose = Pose(cam_r, cam_t / rho)
    if grid_dims is not None:
        from meshforge.fields import GridField
        lo, hi = recon_field.bounds()
        recon_field = GridField.sample(recon_field, grid_dims, lo, hi)
    return recon_field, intr, recon_pose, obs


class TestEndToEndScale:
    @pytest.mark.parametrize("rho", [0.25, 1.0, 3.7])
    def test_analytic_recovery(self, rho):
        field, intr, recon_pose, obs = make_scale_scene(rho)
        p_metric, p_recon = scale_pair_for_observation(obs, intr, field, recon_pose)
        est = estimate_scale([(p_metric, p_recon)])
        assert est.mean_scale == pytest.approx(rho, abs=1e-6 * rho)

    def test_grid_recovery(self):
        rho = 2.0
        field, intr, recon_pose, obs = make_scale_scene(rho, grid_dims=(64, 64, 64))
        p_metric, p_recon = scale_pair_for_observation(obs, intr, field, recon_pose)
        est = estimate_scale([(p_metric, p_recon)])
        assert est.mean_scale == pytest.approx(rho, abs=1e-3 * rho)

    def test_idempotent_after_scaling(self):
        # Re-running the estimate on the already-scaled field gives ~1.
        rho = 0.6
        field, intr, recon_pose, obs = make_scale_scene(rho)
        rescaled = PosedScaledField(field, Pose.identity(), rho)
        pose_rescaled = Pose(recon_pose.r, recon_pose.t * rho)
        p_metric, p_recon = scale_pair_for_observation(obs, intr, rescaled, pose_rescaled)
        est = estimate_scale([(p_metric, p_recon)])
        assert est.mean_scale == pytest.approx(1.0, abs=1e-3)
