"""Tests for correspondence alignment, ICP, and fragment registration."""

import numpy as np
import pytest

from meshforge.errors import (
    DegenerateConfiguration,
    EmptyCloud,
    InsufficientPairs,
    NoCorrespondences,
)
from meshforge.fields import AnalyticField, Sphere, Union
from meshforge.geometry import Pose, rotation_about, rotation_angle
from meshforge.mesher import MeshingConfig, TriangleMesh, marching_cubes
from meshforge.registration import (
    CorrespondenceSet,
    IcpParams,
    RigidResult,
    align_correspondences,
    icp,
    register_fragments,
)


def corr(src, dst, sid="a", tid="b") -> CorrespondenceSet:
    return CorrespondenceSet(source_id=sid, target_id=tid, src=src, dst=dst)


def random_rigid(rng) -> Pose:
    return Pose(rotation_about(rng.normal(size=3), rng.uniform(0, np.pi)),
                rng.normal(size=3))


class TestAlignCorrespondences:
    def test_identity(self):
        pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0.3]])
        pose, s = align_correspondences(corr(pts, pts))
        np.testing.assert_allclose(pose.matrix(), np.eye(4), atol=1e-12)
        assert s == 1.0

    def test_pure_translation(self):
        pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0.3]])
        shift = np.array([1.0, 2.0, 3.0])
        pose, s = align_correspondences(corr(pts, pts + shift), with_scale=True)
        np.testing.assert_allclose(pose.t, shift, atol=1e-12)
        np.testing.assert_allclose(pose.r, np.eye(3), atol=1e-12)
        assert s == pytest.approx(1.0, abs=1e-12)

    def test_similarity_recovery(self):
        # Oracle: generate a known similarity, recover it, compare.
        rng = np.random.default_rng(0)
        for _ in range(20):
            src = rng.normal(size=(10, 3))
            true = random_rigid(rng)
            scale = 2.7
            dst = scale * (src @ true.r.T) + true.t
            pose, s = align_correspondences(corr(src, dst), with_scale=True)
            assert s == pytest.approx(scale, abs=1e-9)
            assert rotation_angle(pose.r.T @ true.r) < 1e-9
            np.testing.assert_allclose(pose.t, true.t, atol=1e-9)

    def test_never_produces_reflection(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            src = rng.normal(size=(6, 3))
            dst = -src + rng.normal(scale=0.05, size=src.shape)  # mirrored + noise
            pose, _ = align_correspondences(corr(src, dst), with_scale=True)
            assert np.linalg.det(pose.r) == pytest.approx(1.0, abs=1e-9)

    def test_rigid_mode_pins_scale(self):
        rng = np.random.default_rng(2)
        src = rng.normal(size=(8, 3))
        dst = 3.0 * src
        pose, s = align_correspondences(corr(src, dst), with_scale=False)
        assert s == 1.0

    def test_insufficient_pairs(self):
        pts = np.zeros((2, 3))
        with pytest.raises(InsufficientPairs):
            align_correspondences(corr(pts, pts))

    def test_collinear_sources(self):
        src = np.stack([np.linspace(0, 1, 5), np.zeros(5), np.zeros(5)], axis=-1)
        with pytest.raises(DegenerateConfiguration):
            align_correspondences(corr(src, src))

    def test_scale_composes_with_apply_scale(self):
        rng = np.random.default_rng(3)
        src = rng.normal(size=(12, 3))
        true = random_rigid(rng)
        base_scale = 1.8
        dst = base_scale * (src @ true.r.T) + true.t
        pre = 2.5
        pose, s = align_correspondences(corr(src * pre, dst), with_scale=True)
        assert s * pre == pytest.approx(base_scale, abs=1e-9)


def sphere_surface_cloud(rng, n=600, radius=0.4):
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts * radius


class TestIcp:
    def test_ground_truth_init_converges_fast(self):
        rng = np.random.default_rng(4)
        cloud = sphere_surface_cloud(rng)
        result = icp(cloud, cloud, Pose.identity(), IcpParams())
        assert result.iterations <= 2
        assert result.rmse < 1e-9
        assert result.converged

    def test_perturbed_sphere_cloud_recovery(self):
        # Oracle: generate-perturb-recover with a fixed seed. Identical band
        # samples in both fragments make exact recovery the unique optimum.
        rng = np.random.default_rng(5)
        band = sphere_surface_cloud(rng, 900)
        band = band[np.abs(band[:, 2]) < 0.1]
        south = sphere_surface_cloud(rng, 900)
        south = south[south[:, 2] < -0.16]
        north = sphere_surface_cloud(rng, 900)
        north = north[north[:, 2] > 0.16]
        target = np.vstack([band, north])
        source = np.vstack([band, south])
        perturb = Pose(rotation_about(np.array([0.2, 1.0, 0.1]), np.deg2rad(5)),
                       np.array([0.012, -0.009, 0.013]))
        moved = perturb.apply(source)
        params = IcpParams(max_iterations=200, max_correspondence_distance=0.05,
                           rel_rmse_tolerance=1e-12)
        result = icp(moved, target, Pose.identity(), params)
        recovered = result.pose
        err_r = rotation_angle(recovered.r @ perturb.r)
        err_t = np.linalg.norm(recovered.apply(perturb.t))
        assert err_r < 1e-4
        assert err_t < 1e-4

    def test_rejection_raises_when_everything_far(self):
        rng = np.random.default_rng(6)
        cloud = sphere_surface_cloud(rng, 100)
        far = cloud + np.array([10.0, 0, 0])
        with pytest.raises(NoCorrespondences):
            icp(cloud, far, Pose.identity(),
                IcpParams(max_correspondence_distance=0.5))

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloud):
            icp(np.zeros((0, 3)), np.zeros((5, 3)), Pose.identity())

    def test_rmse_trace_non_increasing(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            cloud = rng.normal(size=(200, 3))
            perturb = Pose(rotation_about(rng.normal(size=3), rng.uniform(0, 0.15)),
                           rng.normal(scale=0.05, size=3))
            result = icp(perturb.apply(cloud), cloud, Pose.identity(),
                         IcpParams(max_iterations=40, rel_rmse_tolerance=1e-9))
            trace = np.array(result.rmse_trace)
            assert np.all(np.diff(trace) <= 1e-12)

    def test_equivariance_under_common_transform(self):
        rng = np.random.default_rng(8)
        cloud = rng.normal(size=(300, 3))
        perturb = Pose(rotation_about(np.array([0.1, 0.9, 0.2]), 0.08),
                       np.array([0.03, -0.02, 0.05]))
        src = perturb.apply(cloud)
        params = IcpParams(max_iterations=60, rel_rmse_tolerance=1e-12)
        base = icp(src, cloud, Pose.identity(), params)
        g = random_rigid(rng)
        conj = icp(g.apply(src), g.apply(cloud),
                   g.compose(Pose.identity()).compose(g.invert()), params)
        expected = g.compose(base.pose).compose(g.invert())
        assert rotation_angle(conj.pose.r.T @ expected.r) < 1e-9
        np.testing.assert_allclose(conj.pose.t, expected.t, atol=1e-9)

    def test_subsampling_deterministic(self):
        rng = np.random.default_rng(9)
        cloud = rng.normal(size=(500, 3))
        params = IcpParams(sample_count=100)
        a = icp(cloud, cloud, Pose.identity(), params)
        b = icp(cloud, cloud, Pose.identity(), params)
        np.testing.assert_array_equal(a.pose.matrix(), b.pose.matrix())

    def test_low_condition_flag_on_sphere(self):
        rng = np.random.default_rng(10)
        cloud = sphere_surface_cloud(rng, 500)
        result = icp(cloud, cloud, Pose.identity())
        # Sphere-on-sphere rotation is fully observable only through the
        # discrete sampling; the flag fires on genuinely flat spectra, not
        # here. Just assert the field exists and iteration converged.
        assert isinstance(result, RigidResult)
        assert result.converged


def knobbed_sphere() -> AnalyticField:
    """Sphere with two off-axis knobs: no rotational symmetry remains."""
    shape = Union((
        Sphere(np.zeros(3), 0.4),
        Sphere(np.array([0.3, 0.2, 0.05]), 0.18),
        Sphere(np.array([-0.28, 0.22, -0.08]), 0.15),
    ))
    return AnalyticField(shape)


def submesh(mesh, keep_vertex_mask):
    """Faces whose vertices all satisfy the mask, with reindexed vertices."""
    keep_face = keep_vertex_mask[mesh.faces].all(axis=1)
    faces = mesh.faces[keep_face]
    used = np.unique(faces)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(mesh.vertices[used], remap[faces])


def split_fragments(mesh, band=0.12, gap=0.05):
    """Two overlapping fragments of one extraction sharing the band exactly.

    The source fragment skips a thin strip above the band, the way a real
    scan loses grazing-angle coverage, so distance rejection can drop every
    cross-rim match at the true alignment.
    """
    z = mesh.vertices[:, 2]
    target = submesh(mesh, z <= band)
    source = submesh(mesh, (z >= -band) & ((z <= band) | (z >= band + gap)))
    return source, target


class TestRegisterFragments:
    def test_identical_fragments_exact_picks(self):
        field = knobbed_sphere()
        cfg = MeshingConfig((56, 56, 56), [-0.65] * 3, [0.65] * 3)
        mesh = marching_cubes(field, cfg)
        picks = mesh.vertices[[10, 200, 400, 800]]
        pose, diag = register_fragments(mesh, mesh, corr(picks, picks))
        assert rotation_angle(pose.r) < 1e-9
        assert np.linalg.norm(pose.t) < 1e-9
        assert not diag.coarse_only

    def test_half_fragments_with_noisy_picks(self):
        rng = np.random.default_rng(11)
        field = knobbed_sphere()
        cfg = MeshingConfig((48, 48, 48), [-0.65] * 3, [0.65] * 3)
        whole = marching_cubes(field, cfg)
        source_local, target = split_fragments(whole, band=0.15, gap=0.06)

        true = Pose(rotation_about(np.array([0.3, 0.2, 1.0]), 0.5),
                    np.array([0.2, -0.1, 0.15]))
        source = TriangleMesh(true.apply(source_local.vertices), source_local.faces)
        # Three hand-authored picks spread around the shared band, each
        # perturbed by 0.01 to mimic imprecise operator clicks.
        angles = np.deg2rad([0.0, 120.0, 240.0])
        zs = np.array([0.0, 0.08, -0.08])
        ring = np.sqrt(0.4 ** 2 - zs ** 2)
        anchors = np.stack([ring * np.cos(angles), ring * np.sin(angles), zs], axis=-1)
        src_pts = true.apply(anchors) + rng.normal(scale=0.01, size=anchors.shape)
        dst_pts = anchors
        params = IcpParams(max_iterations=300, max_correspondence_distance=0.035,
                           rel_rmse_tolerance=1e-13)
        pose, diag = register_fragments(source, target,
                                        corr(src_pts, dst_pts), params)
        # pose maps source frame -> target frame; truth is true^-1.
        err_r = rotation_angle(pose.r @ true.r)
        err_t = np.linalg.norm(pose.compose(true).t)
        assert err_r < 1e-3
        assert err_t < 1e-3
        assert not diag.coarse_only

    def test_non_overlapping_flags_coarse_only(self):
        field = knobbed_sphere()
        cfg = MeshingConfig((40, 40, 40), [-0.65] * 3, [0.65] * 3)
        whole = marching_cubes(field, cfg)
        mesh_a = submesh(whole, whole.vertices[:, 2] <= -0.1)
        mesh_b = submesh(whole, whole.vertices[:, 2] >= 0.1)
        far = TriangleMesh(mesh_b.vertices + np.array([5.0, 0, 0]), mesh_b.faces)
        picks_src = far.vertices[[0, 50, 100, 150]]
        picks_dst = picks_src + np.array([100.0, 0, 0])
        params = IcpParams(max_correspondence_distance=0.01)
        pose, diag = register_fragments(far, mesh_a, corr(picks_src, picks_dst), params)
        assert diag.coarse_only
        assert diag.icp_result is None
