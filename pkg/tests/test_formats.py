"""Round-trip and error-contract tests for every file format."""

import numpy as np
import pytest

from meshforge.errors import FormatError
from meshforge.fields import (
    AnalyticField,
    BoxShape,
    CheckerTexture,
    Difference,
    GridField,
    PosedScaledField,
    Sphere,
    Union,
)
from meshforge.formats import (
    field_from_json,
    field_to_json,
    load_correspondences,
    load_grid,
    load_intrinsics,
    load_marker_observations,
    load_mesh_ply,
    load_metrics_report,
    load_poses,
    load_ppm,
    load_scale_estimate,
    save_correspondences,
    save_grid,
    save_intrinsics,
    save_marker_observations,
    save_mesh_ply,
    save_metrics_report,
    save_poses,
    save_ppm,
    save_scale_estimate,
)
from meshforge.geometry import CameraIntrinsics, MarkerSpec, Pose, rotation_about
from meshforge.mesher import MeshingConfig, TriangleMesh, colorize, marching_cubes, vertex_normals
from meshforge.registration import CorrespondenceSet
from meshforge.render import Image, MetricsReport
from meshforge.scale import MarkerObservation, ScaleEstimate


class TestIntrinsics:
    def test_round_trip(self, tmp_path):
        intr = CameraIntrinsics(fx=512.5, fy=498.25, cx=321.125, cy=239.5,
                                k1=-0.11, k2=0.02, k3=-0.001, p1=3e-4, p2=-2e-4,
                                width=640, height=480)
        p = tmp_path / "intr.json"
        save_intrinsics(p, intr)
        assert load_intrinsics(p) == intr

    def test_bad_json(self, tmp_path):
        p = tmp_path / "intr.json"
        p.write_text("{not json")
        with pytest.raises(FormatError, match="byte"):
            load_intrinsics(p)


class TestPoses:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        poses = {}
        for fid in (0, 3, 17):
            poses[fid] = Pose(rotation_about(rng.normal(size=3), rng.uniform(0, 3)),
                              rng.normal(size=3))
        p = tmp_path / "poses.json"
        save_poses(p, poses)
        got = load_poses(p)
        assert set(got) == {0, 3, 17}
        for fid in poses:
            np.testing.assert_allclose(got[fid].matrix(), poses[fid].matrix(),
                                       atol=1e-15)

    def test_duplicate_frame_rejected(self, tmp_path):
        p = tmp_path / "poses.json"
        m = Pose.identity().matrix().ravel().tolist()
        p.write_text('{"poses": [{"frame": 1, "t_cam_to_world": %s},'
                     '{"frame": 1, "t_cam_to_world": %s}]}' % (m, m))
        with pytest.raises(FormatError, match="duplicate"):
            load_poses(p)


class TestGrid:
    def make_grid(self):
        f = AnalyticField(Sphere(np.zeros(3), 0.4),
                          CheckerTexture([1, 0, 0], [0, 0, 1], 0.2))
        return GridField.sample(f, (9, 8, 7), [-0.6] * 3, [0.6] * 3)

    def test_round_trip(self, tmp_path):
        g = self.make_grid()
        p = tmp_path / "field.vgrd"
        save_grid(p, g)
        back = load_grid(p)
        assert back.dims == g.dims
        rng = np.random.default_rng(1)
        pts = rng.uniform(-0.6, 0.6, size=(100, 3))
        # f32 storage loses precision; colors quantize to 8 bits.
        np.testing.assert_allclose(back.scalar(pts), g.scalar(pts), atol=1e-6)
        np.testing.assert_allclose(back.color(pts, None), g.color(pts, None),
                                   atol=1.0 / 255)

    def test_truncated_names_byte_offset(self, tmp_path):
        g = self.make_grid()
        p = tmp_path / "field.vgrd"
        save_grid(p, g)
        whole = p.read_bytes()
        cut = tmp_path / "cut.vgrd"
        cut.write_bytes(whole[:len(whole) - 100])
        with pytest.raises(FormatError, match="byte"):
            load_grid(cut)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.vgrd"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            load_grid(p)


class TestFieldSpec:
    def test_analytic_round_trip(self):
        f = AnalyticField(
            Union((Sphere(np.array([0.1, 0, 0]), 0.3),
                   Difference(BoxShape(np.zeros(3), np.ones(3) * 0.4),
                              Sphere(np.zeros(3), 0.2)))),
            CheckerTexture([1, 0, 0], [1, 1, 1], 0.25),
            view_gain=0.5)
        back = field_from_json(field_to_json(f))
        rng = np.random.default_rng(2)
        pts = rng.uniform(-0.6, 0.6, size=(200, 3))
        np.testing.assert_array_equal(back.scalar(pts), f.scalar(pts))
        d = np.array([0.0, 0.0, 1.0])
        np.testing.assert_array_equal(back.color(pts, d), f.color(pts, d))

    def test_posed_round_trip(self):
        base = AnalyticField(Sphere(np.zeros(3), 0.5))
        pose = Pose(rotation_about(np.array([0.2, 1, 0.4]), 0.8), np.array([1, 2, 3.0]))
        f = PosedScaledField(base, pose, 2.5)
        back = field_from_json(field_to_json(f))
        rng = np.random.default_rng(3)
        pts = rng.uniform(-2, 4, size=(100, 3))
        np.testing.assert_allclose(back.scalar(pts), f.scalar(pts), atol=1e-12)


class TestMeshPly:
    def make_mesh(self):
        f = AnalyticField(Sphere(np.zeros(3), 0.4),
                          CheckerTexture([1, 0, 0], [0, 0, 1], 0.2))
        mesh = marching_cubes(f, MeshingConfig((24, 24, 24), [-0.5] * 3, [0.5] * 3))
        return colorize(vertex_normals(mesh, f), f)

    def test_round_trip(self, tmp_path):
        mesh = self.make_mesh()
        p = tmp_path / "mesh.ply"
        save_mesh_ply(p, mesh, manifest={"tool": "test"})
        back, manifest = load_mesh_ply(p)
        assert manifest == {"tool": "test"}
        assert len(back.vertices) == len(mesh.vertices)
        np.testing.assert_array_equal(back.faces, mesh.faces)
        # Positions quantize to f32; colors to u8.
        assert np.abs(back.vertices - mesh.vertices).max() < 1e-6
        assert np.abs(back.colors - mesh.colors).max() <= 0.5 / 255 + 1e-9

    def test_empty_mesh(self, tmp_path):
        p = tmp_path / "empty.ply"
        save_mesh_ply(p, TriangleMesh.empty())
        back, _ = load_mesh_ply(p)
        assert len(back.vertices) == 0 and len(back.faces) == 0
        header = p.read_bytes().decode()
        assert "element vertex 0" in header and "element face 0" in header

    def test_truncated(self, tmp_path):
        mesh = self.make_mesh()
        p = tmp_path / "mesh.ply"
        save_mesh_ply(p, mesh)
        data = p.read_bytes()
        cut = tmp_path / "cut.ply"
        cut.write_bytes(data[:-40])
        with pytest.raises(FormatError, match="truncated"):
            load_mesh_ply(cut)

    def test_deterministic_bytes(self, tmp_path):
        mesh = self.make_mesh()
        p1, p2 = tmp_path / "a.ply", tmp_path / "b.ply"
        save_mesh_ply(p1, mesh, manifest={"k": 1})
        save_mesh_ply(p2, mesh, manifest={"k": 1})
        assert p1.read_bytes() == p2.read_bytes()


class TestCorrespondences:
    def test_round_trip(self, tmp_path):
        c = CorrespondenceSet("frag1", "frag0",
                              np.array([[0.0, 1, 2], [3, 4, 5], [6, 7, 8]]),
                              np.array([[0.5, 1, 2], [3, 4.5, 5], [6, 7, 8.5]]))
        p = tmp_path / "corr.json"
        save_correspondences(p, c)
        back = load_correspondences(p)
        assert back.source_id == "frag1" and back.target_id == "frag0"
        np.testing.assert_array_equal(back.src, c.src)
        np.testing.assert_array_equal(back.dst, c.dst)


class TestMarkerObservations:
    def test_round_trip(self, tmp_path):
        spec = MarkerSpec(rows=3, cols=4, square_size=0.05, anchor_index=2)
        rng = np.random.default_rng(5)
        obs = [MarkerObservation(frame_id=i, corners2d=rng.uniform(0, 640, (12, 2)),
                                 spec=spec) for i in (2, 9)]
        p = tmp_path / "markers.json"
        save_marker_observations(p, obs)
        back = load_marker_observations(p)
        assert [o.frame_id for o in back] == [2, 9]
        assert back[0].spec == spec
        np.testing.assert_allclose(back[1].corners2d, obs[1].corners2d)


class TestScaleEstimate:
    def test_round_trip(self, tmp_path):
        est = ScaleEstimate(((0, 2.0), (5, 4.0)), 3.0)
        p = tmp_path / "scale.json"
        save_scale_estimate(p, est)
        assert load_scale_estimate(p) == est


class TestMetricsReport:
    def test_golden_row_format(self, tmp_path):
        per = [(3, MetricsReport(0.1, 0.2, 13.979, 100)),
               (7, MetricsReport(0.05, 0.0875, 21.16, 100))]
        agg = MetricsReport(0.075, 0.14375, 16.848, 200)
        p = tmp_path / "metrics.csv"
        save_metrics_report(p, per, agg, excluded=(9,), manifest={"v": 1})
        text = p.read_text()
        lines = text.splitlines()
        assert lines[0] == '# manifest {"v":1}'
        assert lines[1] == "# excluded_frames 9"
        assert lines[2] == "frame_id,mae,rmse,psnr"
        assert lines[3] == "3,0.100000,0.200000,13.979"
        assert lines[-1] == "aggregate,0.075000,0.143750,16.848"

    def test_load(self, tmp_path):
        per = [(3, MetricsReport(0.1, 0.2, 13.979, 100))]
        agg = MetricsReport(0.1, 0.2, 13.979, 100)
        p = tmp_path / "metrics.csv"
        save_metrics_report(p, per, agg, manifest={"v": 2})
        rows, manifest = load_metrics_report(p)
        assert manifest == {"v": 2}
        assert rows[0][0] == "3"
        assert rows[-1][0] == "aggregate"
        assert rows[0][1]["mae"] == pytest.approx(0.1)


class TestPpm:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        img = Image(rng.uniform(size=(13, 17, 3)))
        p = tmp_path / "img.ppm"
        save_ppm(p, img)
        back = load_ppm(p)
        assert (back.width, back.height) == (17, 13)
        assert np.abs(back.pixels - img.pixels).max() <= 0.5 / 255 + 1e-12

    def test_exact_u8_values(self, tmp_path):
        img = Image(np.stack([np.full((2, 2), v / 255.0) for v in (0, 128, 255)],
                             axis=-1))
        p = tmp_path / "img.ppm"
        save_ppm(p, img)
        back = load_ppm(p)
        np.testing.assert_array_equal(back.pixels, img.pixels)

    def test_truncated(self, tmp_path):
        p = tmp_path / "img.ppm"
        save_ppm(p, Image(np.zeros((4, 4, 3))))
        cut = tmp_path / "cut.ppm"
        cut.write_bytes(p.read_bytes()[:-10])
        with pytest.raises(FormatError, match="truncated"):
            load_ppm(cut)
