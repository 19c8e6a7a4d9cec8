"""File formats for every pipeline artifact.

All binary formats are little-endian. Text formats are JSON except the
metrics report (delimited text) and images (8-bit binary PPM).

* intrinsics: JSON object {width, height, fx, fy, cx, cy, k1, k2, k3, p1, p2}.
* poses: JSON list of {frame, t_cam_to_world: [16 row-major reals]}.
* grid field: magic "VGRD", u32 version=1, u32 nx/ny/nz, 6 f64 bbox values
  (min xyz, max xyz), nx*ny*nz f32 scalars (x fastest, then y, then z),
  then rgb u8 triples in the same order.
* mesh: binary little-endian PLY; per-vertex float x/y/z/nx/ny/nz and
  uchar red/green/blue, faces as uchar-count + 3 uint32 indices.
* correspondences: JSON {source_id, target_id, pairs: [{src, dst}]}.
* marker observations: JSON {spec: {rows, cols, square_size, anchor_index},
  frames: [{frame, corners2d: [[u, v], ...]}]}.
* metrics report: comma-separated with header frame_id,mae,rmse,psnr plus
  an `aggregate` row; `#`-prefixed lines carry the manifest.
* images: PPM (P6), u8 values mapped linearly onto [0, 1].

Writers embed a provenance manifest where the format allows a comment or
extra key (PLY comment, JSON "manifest" key, report comment line); the
VGRD format has no comment slot, so grid manifests live in a sidecar.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError
from .fields import (
    AnalyticField,
    AxisGradientTexture,
    BoxShape,
    CheckerTexture,
    ConstantTexture,
    Cylinder,
    Difference,
    GridField,
    Intersection,
    PosedScaledField,
    Shape,
    Sphere,
    Texture,
    Torus,
    Union,
    VolumeField,
)
from .geometry import CameraIntrinsics, MarkerSpec, Pose
from .mesher import TriangleMesh
from .registration import CorrespondenceSet
from .render import Image, MetricsReport
from .scale import MarkerObservation, ScaleEstimate


def _read_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON at byte {e.pos}: {e.msg}") from e


def _write_json(path: Path, obj: dict, manifest: Optional[dict] = None) -> None:
    if manifest is not None:
        obj = {**obj, "manifest": manifest}
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- intrinsics ---------------------------------------------------------------

def save_intrinsics(path, intr: CameraIntrinsics, manifest=None) -> None:
    _write_json(Path(path), {
        "width": intr.width, "height": intr.height,
        "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
        "k1": intr.k1, "k2": intr.k2, "k3": intr.k3,
        "p1": intr.p1, "p2": intr.p2,
    }, manifest)


def load_intrinsics(path) -> CameraIntrinsics:
    d = _read_json(Path(path))
    try:
        return CameraIntrinsics(
            fx=float(d["fx"]), fy=float(d["fy"]),
            cx=float(d["cx"]), cy=float(d["cy"]),
            k1=float(d.get("k1", 0.0)), k2=float(d.get("k2", 0.0)),
            k3=float(d.get("k3", 0.0)), p1=float(d.get("p1", 0.0)),
            p2=float(d.get("p2", 0.0)),
            width=int(d["width"]), height=int(d["height"]))
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: bad intrinsics: {e}") from e


# --- poses --------------------------------------------------------------------

def save_poses(path, poses: dict[int, Pose], manifest=None) -> None:
    rows = [{"frame": int(fid), "t_cam_to_world": pose.matrix().ravel().tolist()}
            for fid, pose in sorted(poses.items())]
    _write_json(Path(path), {"poses": rows}, manifest)


def load_poses(path) -> dict[int, Pose]:
    d = _read_json(Path(path))
    out: dict[int, Pose] = {}
    try:
        for row in d["poses"]:
            fid = int(row["frame"])
            m = np.asarray(row["t_cam_to_world"], dtype=np.float64).reshape(4, 4)
            if fid in out:
                raise FormatError(f"{path}: duplicate frame id {fid}")
            out[fid] = Pose.from_matrix(m)
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: bad pose list: {e}") from e
    return out


# --- grid fields (VGRD) --------------------------------------------------------

GRID_MAGIC = b"VGRD"
GRID_VERSION = 1


def save_grid(path, grid: GridField) -> None:
    lo, hi = grid.bounds()
    nx, ny, nz = grid.dims
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<IIII", GRID_VERSION, nx, ny, nz))
        fh.write(struct.pack("<6d", *lo, *hi))
        # File order is x fastest: transpose (nx,ny,nz) -> (nz,ny,nx) C-order.
        scal = grid._scalars.transpose(2, 1, 0).astype("<f4")
        fh.write(scal.tobytes())
        colors = np.clip(grid._colors.transpose(2, 1, 0, 3), 0.0, 1.0)
        fh.write((colors * 255.0).round().astype(np.uint8).tobytes())


def load_grid(path) -> GridField:
    data = Path(path).read_bytes()
    off = 0

    def need(count: int, what: str) -> int:
        nonlocal off
        if off + count > len(data):
            raise FormatError(
                f"{path}: truncated {what} at byte {off}: need {count} bytes, "
                f"have {len(data) - off}")
        start = off
        off += count
        return start

    start = need(4, "magic")
    if data[start:start + 4] != GRID_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    start = need(16, "header")
    version, nx, ny, nz = struct.unpack_from("<IIII", data, start)
    if version != GRID_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    if min(nx, ny, nz) < 2:
        raise FormatError(f"{path}: grid dims must be >= 2, got {nx}x{ny}x{nz}")
    start = need(48, "bbox")
    bbox = struct.unpack_from("<6d", data, start)
    count = nx * ny * nz
    start = need(4 * count, "scalar payload")
    scal = np.frombuffer(data, dtype="<f4", count=count, offset=start)
    scal = scal.reshape(nz, ny, nx).transpose(2, 1, 0).astype(np.float64)
    start = need(3 * count, "color payload")
    cols = np.frombuffer(data, dtype=np.uint8, count=3 * count, offset=start)
    cols = cols.reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3).astype(np.float64) / 255.0
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes at byte {off}")
    return GridField(bbox[:3], bbox[3:], scal, cols)


# --- analytic field specs --------------------------------------------------------

def _shape_to_json(s: Shape) -> dict:
    if isinstance(s, Sphere):
        return {"prim": "sphere", "center": s.center.tolist(), "radius": s.radius}
    if isinstance(s, BoxShape):
        return {"prim": "box", "center": s.center.tolist(),
                "half_extents": s.half_extents.tolist()}
    if isinstance(s, Cylinder):
        return {"prim": "cylinder", "center": s.center.tolist(), "axis": s.axis,
                "radius": s.radius, "half_height": s.half_height}
    if isinstance(s, Torus):
        return {"prim": "torus", "center": s.center.tolist(),
                "major_radius": s.major_radius, "minor_radius": s.minor_radius}
    if isinstance(s, Union):
        return {"op": "union", "parts": [_shape_to_json(p) for p in s.parts]}
    if isinstance(s, Intersection):
        return {"op": "intersection", "parts": [_shape_to_json(p) for p in s.parts]}
    if isinstance(s, Difference):
        return {"op": "difference", "base": _shape_to_json(s.base),
                "cut": _shape_to_json(s.cut)}
    raise ValueError(f"unknown shape {type(s).__name__}")


def _shape_from_json(d: dict) -> Shape:
    if "prim" in d:
        kind = d["prim"]
        if kind == "sphere":
            return Sphere(np.asarray(d["center"]), float(d["radius"]))
        if kind == "box":
            return BoxShape(np.asarray(d["center"]), np.asarray(d["half_extents"]))
        if kind == "cylinder":
            return Cylinder(np.asarray(d["center"]), int(d["axis"]),
                            float(d["radius"]), float(d["half_height"]))
        if kind == "torus":
            return Torus(np.asarray(d["center"]), float(d["major_radius"]),
                         float(d["minor_radius"]))
        raise FormatError(f"unknown primitive {kind!r}")
    op = d.get("op")
    if op == "union":
        return Union(tuple(_shape_from_json(p) for p in d["parts"]))
    if op == "intersection":
        return Intersection(tuple(_shape_from_json(p) for p in d["parts"]))
    if op == "difference":
        return Difference(_shape_from_json(d["base"]), _shape_from_json(d["cut"]))
    raise FormatError(f"unknown CSG op {op!r}")


def _texture_to_json(t: Texture) -> dict:
    if isinstance(t, ConstantTexture):
        return {"type": "constant", "rgb": t.color.tolist()}
    if isinstance(t, CheckerTexture):
        return {"type": "checker", "rgb_a": t.color_a.tolist(),
                "rgb_b": t.color_b.tolist(), "period": t.period}
    if isinstance(t, AxisGradientTexture):
        return {"type": "axis_gradient", "rgb_a": t.color_a.tolist(),
                "rgb_b": t.color_b.tolist(), "axis": t.axis}
    raise ValueError(f"unknown texture {type(t).__name__}")


def _texture_from_json(d: dict) -> Texture:
    kind = d.get("type")
    if kind == "constant":
        return ConstantTexture(np.asarray(d["rgb"]))
    if kind == "checker":
        return CheckerTexture(np.asarray(d["rgb_a"]), np.asarray(d["rgb_b"]),
                              float(d["period"]))
    if kind == "axis_gradient":
        return AxisGradientTexture(np.asarray(d["rgb_a"]), np.asarray(d["rgb_b"]),
                                   int(d["axis"]))
    raise FormatError(f"unknown texture type {kind!r}")


def field_to_json(f: VolumeField) -> dict:
    if isinstance(f, PosedScaledField):
        return {"kind": "posed",
                "pose": f.pose.matrix().ravel().tolist(),
                "scale": f.scale,
                "base": field_to_json(f.base)}
    if isinstance(f, AnalyticField):
        return {"kind": "analytic",
                "shape": _shape_to_json(f.shape),
                "texture": _texture_to_json(f.texture),
                "view_gain": f.view_gain}
    raise ValueError(f"cannot serialize field {type(f).__name__} inline")


def field_from_json(d: dict) -> VolumeField:
    kind = d.get("kind")
    if kind == "posed":
        pose = Pose.from_matrix(np.asarray(d["pose"], dtype=np.float64).reshape(4, 4))
        return PosedScaledField(field_from_json(d["base"]), pose, float(d["scale"]))
    if kind == "analytic":
        return AnalyticField(_shape_from_json(d["shape"]),
                             _texture_from_json(d["texture"]),
                             float(d.get("view_gain", 0.0)))
    raise FormatError(f"unknown field kind {kind!r}")


def save_field_spec(path, f: VolumeField, manifest=None) -> None:
    _write_json(Path(path), field_to_json(f), manifest)


def load_field_spec(path) -> VolumeField:
    return field_from_json(_read_json(Path(path)))


# --- meshes (binary PLY) ----------------------------------------------------------

_VERTEX_DTYPE = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
])
_FACE_DTYPE = np.dtype([("count", "u1"), ("a", "<u4"), ("b", "<u4"), ("c", "<u4")])


def save_mesh_ply(path, mesh: TriangleMesh, manifest: Optional[dict] = None) -> None:
    n_v, n_f = len(mesh.vertices), len(mesh.faces)
    header = ["ply", "format binary_little_endian 1.0"]
    if manifest is not None:
        header.append("comment manifest " + json.dumps(manifest, sort_keys=True,
                                                       separators=(",", ":")))
    header += [
        f"element vertex {n_v}",
        "property float x", "property float y", "property float z",
        "property float nx", "property float ny", "property float nz",
        "property uchar red", "property uchar green", "property uchar blue",
        f"element face {n_f}",
        "property list uchar uint vertex_indices",
        "end_header",
    ]
    verts = np.zeros(n_v, dtype=_VERTEX_DTYPE)
    if n_v:
        verts["x"], verts["y"], verts["z"] = mesh.vertices.T.astype("<f4")
        if mesh.has_normals:
            verts["nx"], verts["ny"], verts["nz"] = mesh.normals.T.astype("<f4")
        if mesh.has_colors:
            rgb = (np.clip(mesh.colors, 0.0, 1.0) * 255.0).round().astype(np.uint8)
            verts["red"], verts["green"], verts["blue"] = rgb.T
    faces = np.zeros(n_f, dtype=_FACE_DTYPE)
    if n_f:
        faces["count"] = 3
        faces["a"], faces["b"], faces["c"] = mesh.faces.T.astype("<u4")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(verts.tobytes())
        fh.write(faces.tobytes())


def load_mesh_ply(path) -> tuple[TriangleMesh, Optional[dict]]:
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header_lines = data[:end].decode("ascii", "replace").splitlines()
    body_off = end + len(b"end_header\n")
    n_v = n_f = 0
    manifest = None
    for line in header_lines:
        if line.startswith("element vertex "):
            n_v = int(line.split()[-1])
        elif line.startswith("element face "):
            n_f = int(line.split()[-1])
        elif line.startswith("comment manifest "):
            manifest = json.loads(line[len("comment manifest "):])
        elif line.startswith("format ") and "binary_little_endian" not in line:
            raise FormatError(f"{path}: only binary little-endian PLY supported")
    need = n_v * _VERTEX_DTYPE.itemsize + n_f * _FACE_DTYPE.itemsize
    if len(data) - body_off < need:
        raise FormatError(
            f"{path}: truncated payload at byte {len(data)}: need "
            f"{body_off + need} bytes")
    verts = np.frombuffer(data, dtype=_VERTEX_DTYPE, count=n_v, offset=body_off)
    faces = np.frombuffer(data, dtype=_FACE_DTYPE, count=n_f,
                          offset=body_off + n_v * _VERTEX_DTYPE.itemsize)
    if n_f and not np.all(faces["count"] == 3):
        raise FormatError(f"{path}: non-triangular face present")
    vertices = np.stack([verts["x"], verts["y"], verts["z"]], axis=-1).astype(np.float64)
    normals = np.stack([verts["nx"], verts["ny"], verts["nz"]], axis=-1).astype(np.float64)
    colors = np.stack([verts["red"], verts["green"], verts["blue"]],
                      axis=-1).astype(np.float64) / 255.0
    fc = np.stack([faces["a"], faces["b"], faces["c"]], axis=-1).astype(np.int64)
    has_normals = n_v > 0 and np.abs(np.linalg.norm(normals, axis=1) - 1.0).max() < 1e-3
    if has_normals:
        mag = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.maximum(mag, 1e-300)
    mesh = TriangleMesh(vertices, fc,
                        normals if has_normals else None,
                        colors if n_v else None)
    return mesh, manifest


# --- correspondences ---------------------------------------------------------------

def save_correspondences(path, c: CorrespondenceSet, manifest=None) -> None:
    pairs = [{"src": s.tolist(), "dst": d.tolist()} for s, d in zip(c.src, c.dst)]
    _write_json(Path(path), {"source_id": c.source_id, "target_id": c.target_id,
                             "pairs": pairs}, manifest)


def load_correspondences(path) -> CorrespondenceSet:
    d = _read_json(Path(path))
    try:
        pairs = d["pairs"]
        src = np.asarray([p["src"] for p in pairs], dtype=np.float64).reshape(-1, 3)
        dst = np.asarray([p["dst"] for p in pairs], dtype=np.float64).reshape(-1, 3)
        return CorrespondenceSet(str(d["source_id"]), str(d["target_id"]), src, dst)
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: bad correspondence set: {e}") from e


# --- marker observations -------------------------------------------------------------

def save_marker_observations(path, observations: list[MarkerObservation],
                             manifest=None) -> None:
    if not observations:
        raise ValueError("at least one marker observation is required")
    spec = observations[0].spec
    _write_json(Path(path), {
        "spec": {"rows": spec.rows, "cols": spec.cols,
                 "square_size": spec.square_size,
                 "anchor_index": spec.anchor_index},
        "frames": [{"frame": o.frame_id, "corners2d": o.corners2d.tolist()}
                   for o in observations],
    }, manifest)


def load_marker_observations(path) -> list[MarkerObservation]:
    d = _read_json(Path(path))
    try:
        s = d["spec"]
        spec = MarkerSpec(rows=int(s["rows"]), cols=int(s["cols"]),
                          square_size=float(s["square_size"]),
                          anchor_index=int(s.get("anchor_index", 0)))
        return [MarkerObservation(frame_id=int(fr["frame"]),
                                  corners2d=np.asarray(fr["corners2d"]),
                                  spec=spec)
                for fr in d["frames"]]
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: bad marker observations: {e}") from e


# --- scale estimates ----------------------------------------------------------------

def save_scale_estimate(path, est: ScaleEstimate, manifest=None) -> None:
    _write_json(Path(path), {
        "per_frame": [{"frame": f, "scale": s} for f, s in est.per_frame],
        "mean_scale": est.mean_scale,
    }, manifest)


def load_scale_estimate(path) -> ScaleEstimate:
    d = _read_json(Path(path))
    try:
        per = tuple((int(r["frame"]), float(r["scale"])) for r in d["per_frame"])
        return ScaleEstimate(per, float(d["mean_scale"]))
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: bad scale estimate: {e}") from e


# --- metrics report -------------------------------------------------------------------

def save_metrics_report(path, per_frame, aggregate: MetricsReport,
                        excluded=(), manifest: Optional[dict] = None) -> None:
    """per_frame: iterable of (frame_id, MetricsReport)."""
    lines = []
    if manifest is not None:
        lines.append("# manifest " + json.dumps(manifest, sort_keys=True,
                                                separators=(",", ":")))
    if excluded:
        lines.append("# excluded_frames " + ",".join(str(f) for f in excluded))
    lines.append("frame_id,mae,rmse,psnr")
    for fid, rep in per_frame:
        lines.append(f"{fid},{rep.mae:.6f},{rep.rmse:.6f},{rep.psnr:.3f}")
    lines.append(f"aggregate,{aggregate.mae:.6f},{aggregate.rmse:.6f},"
                 f"{aggregate.psnr:.3f}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_metrics_report(path) -> tuple[list[tuple[str, dict]], Optional[dict]]:
    """Parsed rows as (frame_id, {mae, rmse, psnr}) plus the manifest."""
    rows = []
    manifest = None
    for ln, line in enumerate(Path(path).read_text().splitlines()):
        if line.startswith("# manifest "):
            manifest = json.loads(line[len("# manifest "):])
            continue
        if line.startswith("#") or not line.strip():
            continue
        parts = line.split(",")
        if parts[0] == "frame_id":
            continue
        if len(parts) != 4:
            raise FormatError(f"{path}: malformed row at line {ln + 1}")
        rows.append((parts[0], {"mae": float(parts[1]), "rmse": float(parts[2]),
                                "psnr": float(parts[3])}))
    return rows, manifest


# --- images (PPM) ----------------------------------------------------------------------

def save_ppm(path, image: Image) -> None:
    data = (np.clip(image.pixels, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{image.width} {image.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def load_ppm(path) -> Image:
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise FormatError(f"{path}: not a binary PPM (P6) file")
    # Header: magic, width, height, maxval, single whitespace, then payload.
    fields: list[bytes] = []
    off = 2
    while len(fields) < 3:
        while off < len(data) and data[off:off + 1].isspace():
            off += 1
        if off < len(data) and data[off:off + 1] == b"#":
            while off < len(data) and data[off:off + 1] != b"\n":
                off += 1
            continue
        start = off
        while off < len(data) and not data[off:off + 1].isspace():
            off += 1
        if start == off:
            raise FormatError(f"{path}: truncated PPM header at byte {off}")
        fields.append(data[start:off])
    off += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(v) for v in fields)
    except ValueError as e:
        raise FormatError(f"{path}: bad PPM header: {e}") from e
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM supported, maxval {maxval}")
    need = width * height * 3
    if len(data) - off < need:
        raise FormatError(
            f"{path}: truncated PPM payload at byte {len(data)}: need {off + need}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=off)
    return Image(pixels.reshape(height, width, 3).astype(np.float64) / 255.0)
