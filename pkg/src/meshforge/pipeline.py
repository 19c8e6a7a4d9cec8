"""End-to-end pipeline stages and the synthetic fixture generator.

Stages communicate only through declared files in the output directory:

* ``mesh``     bundle field  -> {id}_raw.ply           (reconstruction units)
* ``scale``    marker + ray  -> {id}_scale.json, {id}_scaled.ply (metric units)
* ``register`` correspondences + scaled meshes -> {src}_to_{dst}_transform.json
* ``merge``    scaled fragments + correspondences -> merged.ply
* ``eval``     mesh + reference frames -> metrics.csv

Every artifact embeds a manifest (tool version, config hash, input hashes)
so reruns are verifiably identical. A missing upstream file raises
StageInputMissing naming the file; nothing is silently recomputed.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ConfigurationError, StageInputMissing
from .fields import (
    AnalyticField,
    BoxShape,
    CheckerTexture,
    ConstantTexture,
    GridField,
    PosedScaledField,
    Sphere,
    Union as ShapeUnion,
    VolumeField,
    union_field,
)
from .formats import (
    field_from_json,
    load_correspondences,
    load_grid,
    load_intrinsics,
    load_marker_observations,
    load_mesh_ply,
    load_poses,
    load_ppm,
    load_scale_estimate,
    save_correspondences,
    save_field_spec,
    save_grid,
    save_intrinsics,
    save_marker_observations,
    save_mesh_ply,
    save_metrics_report,
    save_poses,
    save_ppm,
    save_scale_estimate,
)
from .geometry import (
    CameraIntrinsics,
    MarkerSpec,
    Pose,
    marker_corners_3d,
    project,
    rotation_about,
)
from .mesher import MeshingConfig, TriangleMesh, colorize, decimate, marching_cubes, vertex_normals
from .registration import CorrespondenceSet, IcpParams, register_fragments
from .render import EvalOutcome, Image, evaluate_against_frames, raytrace_field
from .scale import (
    MarkerObservation,
    ScaleEstimate,
    apply_scale,
    estimate_scale,
    scale_pair_for_observation,
)


@dataclass(frozen=True)
class VideoBundle:
    """One video's inputs: camera, frame poses, field stand-in, markers.

    ``meshing_bbox`` optionally overrides the config-level extraction box;
    fragments live in their own reconstruction frames, so the object region
    is framed per video.
    """

    id: str
    intrinsics: CameraIntrinsics
    poses: dict[int, Pose]
    field: VolumeField
    marker_observations: tuple[MarkerObservation, ...]
    frames_dir: Optional[Path] = None
    meshing_bbox: Optional[tuple[np.ndarray, np.ndarray]] = None
    input_paths: tuple[Path, ...] = ()

    def __post_init__(self):
        if not self.marker_observations:
            raise ConfigurationError(
                f"bundle {self.id!r}: at least one marker observation required")
        for obs in self.marker_observations:
            if obs.frame_id not in self.poses:
                raise ConfigurationError(
                    f"bundle {self.id!r}: marker frame {obs.frame_id} has no pose")

    def meshing_config(self, base: MeshingConfig) -> MeshingConfig:
        if self.meshing_bbox is None:
            return base
        lo, hi = self.meshing_bbox
        return MeshingConfig(base.resolution, lo, hi, base.iso, base.gradient_step)


@dataclass(frozen=True)
class EvalConfig:
    frame_sample: int = 20
    seed: int = 0
    mask_mode: str = "object"


@dataclass(frozen=True)
class PipelineConfig:
    bundles: tuple[VideoBundle, ...]
    meshing: MeshingConfig
    icp: IcpParams
    eval: EvalConfig
    output_dir: Path
    decimate_cell: Optional[float] = None
    correspondence_paths: tuple[Path, ...] = ()
    config_path: Optional[Path] = None
    threads: int = 1

    def __post_init__(self):
        if not self.bundles:
            raise ConfigurationError("at least one bundle is required")
        ids = [b.id for b in self.bundles]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("bundle ids must be unique")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def build_manifest(cfg: PipelineConfig, inputs: list[Path]) -> dict:
    manifest = {
        "tool": f"meshforge {__version__}",
        "config_sha256": sha256_file(cfg.config_path) if cfg.config_path else None,
        "inputs": {str(Path(p).name): sha256_file(p) for p in sorted(inputs)},
    }
    return manifest


def load_config(path, output_dir: Optional[Path] = None,
                threads: int = 1) -> PipelineConfig:
    """Read a pipeline config JSON; paths resolve relative to the file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON: {e}") from e
    base = path.parent

    bundles = []
    for b in raw.get("bundles", []):
        intr_path = base / b["intrinsics"]
        poses_path = base / b["poses"]
        markers_path = base / b["marker_observations"]
        for p in (intr_path, poses_path, markers_path):
            if not p.exists():
                raise StageInputMissing(f"bundle input missing: {p}")
        field_spec = b["field"]
        field_path = base / field_spec["path"]
        if not field_path.exists():
            raise StageInputMissing(f"bundle field missing: {field_path}")
        if field_spec["kind"] == "grid":
            field: VolumeField = load_grid(field_path)
        elif field_spec["kind"] == "analytic":
            field = field_from_json(json.loads(field_path.read_text()))
        else:
            raise ConfigurationError(
                f"bundle {b.get('id')}: unknown field kind {field_spec['kind']!r}")
        frames_dir = base / b["frames_dir"] if b.get("frames_dir") else None
        bbox = None
        if "meshing_bbox" in b:
            bbox = (np.asarray(b["meshing_bbox"]["min"], dtype=np.float64),
                    np.asarray(b["meshing_bbox"]["max"], dtype=np.float64))
        bundles.append(VideoBundle(
            id=str(b["id"]),
            intrinsics=load_intrinsics(intr_path),
            poses=load_poses(poses_path),
            field=field,
            marker_observations=tuple(load_marker_observations(markers_path)),
            frames_dir=frames_dir,
            meshing_bbox=bbox,
            input_paths=(intr_path, poses_path, markers_path, field_path),
        ))

    m = raw["meshing"]
    meshing = MeshingConfig(tuple(m["resolution"]), m["bbox_min"], m["bbox_max"],
                            float(m.get("iso", 0.0)),
                            float(m.get("gradient_step", 0.0)))
    icp_raw = raw.get("icp", {})
    icp = IcpParams(
        max_iterations=int(icp_raw.get("max_iterations", 50)),
        max_correspondence_distance=float(
            icp_raw.get("max_correspondence_distance", np.inf)),
        rel_rmse_tolerance=float(icp_raw.get("rel_rmse_tolerance", 1e-6)),
        sample_count=int(icp_raw.get("sample_count", 0)))
    ev = raw.get("eval", {})
    eval_cfg = EvalConfig(frame_sample=int(ev.get("frame_sample", 20)),
                          seed=int(ev.get("seed", 0)),
                          mask_mode=str(ev.get("mask_mode", "object")))
    out = Path(output_dir) if output_dir else base / raw.get("output_dir", "out")
    corr = tuple(base / c for c in raw.get("correspondences", []))
    dec = raw.get("decimate_cell")
    return PipelineConfig(tuple(bundles), meshing, icp, eval_cfg, out,
                          None if dec is None else float(dec), corr, path,
                          threads=threads)


# --- stage operations ------------------------------------------------------------

def run_mesh(bundle: VideoBundle, meshing: MeshingConfig,
             workers: int = 1) -> TriangleMesh:
    """Extract, orient, and colorize one fragment in reconstruction units."""
    cfg = bundle.meshing_config(meshing)
    mesh = marching_cubes(bundle.field, cfg, workers=workers)
    mesh = vertex_normals(mesh, bundle.field, cfg.effective_gradient_step())
    if len(mesh.vertices):
        mesh = colorize(mesh, bundle.field, "opposite_normal")
    return mesh


def run_scale(bundle: VideoBundle) -> ScaleEstimate:
    """Marker-based metric scale for one bundle (mean over observations)."""
    pairs = []
    frame_ids = []
    for obs in bundle.marker_observations:
        pose = bundle.poses[obs.frame_id]
        pairs.append(scale_pair_for_observation(obs, bundle.intrinsics,
                                                bundle.field, pose))
        frame_ids.append(obs.frame_id)
    return estimate_scale(pairs, frame_ids)


def run_merge(fragments: list[tuple[str, TriangleMesh, VolumeField, float]],
              correspondences: list[CorrespondenceSet],
              icp_params: IcpParams,
              meshing: MeshingConfig,
              decimate_cell: Optional[float] = None,
              workers: int = 1) -> tuple[TriangleMesh, list[dict]]:
    """Register scaled fragments into the first fragment's frame and re-extract.

    ``fragments``: (id, scaled mesh, reconstruction field, scale) per video.
    A single fragment passes through re-extraction (identical lattice, then
    scaling), so the output equals the scaled ``run_mesh`` result.
    """
    if not fragments:
        raise ConfigurationError("merge requires at least one fragment")
    first_id, first_mesh, first_field, first_scale = fragments[0]

    if len(fragments) == 1:
        mesh = marching_cubes(first_field, meshing, workers=workers)
        mesh = vertex_normals(mesh, first_field, meshing.effective_gradient_step())
        if len(mesh.vertices):
            mesh = colorize(mesh, first_field, "opposite_normal")
        merged = apply_scale(mesh, first_scale)
        if decimate_cell:
            merged = decimate(merged, decimate_cell)
        return merged, []

    by_pair = {(c.source_id, c.target_id): c for c in correspondences}
    transforms: dict[str, Pose] = {first_id: Pose.identity()}
    diagnostics: list[dict] = []
    meshes = {fid: m for fid, m, _, _ in fragments}

    # Chain each fragment to the first through adjacent pairs.
    order = [f[0] for f in fragments]
    for i in range(1, len(order)):
        src_id = order[i]
        # Prefer a direct pair to any already-placed fragment.
        placed = [t for t in order[:i] if t in transforms]
        pair = None
        for tgt_id in placed:
            if (src_id, tgt_id) in by_pair:
                pair = by_pair[(src_id, tgt_id)]
                break
        if pair is None:
            raise ConfigurationError(
                f"no correspondence set registers fragment {src_id!r} to any of "
                f"{placed!r}")
        pose, diag = register_fragments(meshes[src_id], meshes[pair.target_id],
                                        pair, icp_params)
        transforms[src_id] = transforms[pair.target_id].compose(pose)
        diagnostics.append({
            "source_id": src_id,
            "target_id": pair.target_id,
            "coarse_rmse": diag.coarse_rmse,
            "icp_rmse": diag.icp_result.rmse if diag.icp_result else None,
            "iterations": diag.icp_result.iterations if diag.icp_result else 0,
            "coarse_only": diag.coarse_only,
            "low_condition": diag.low_condition,
        })

    parts = [PosedScaledField(field, transforms[fid], scale)
             for fid, _, field, scale in fragments]
    joint = union_field(parts)

    # Extraction lattice: registered scaled meshes' joint bounds plus margin
    # (field bounds would drag in off-object geometry like the table).
    all_pts = np.vstack([transforms[fid].apply(m.vertices)
                         for fid, m, _, _ in fragments if len(m.vertices)])
    lo = all_pts.min(axis=0)
    hi = all_pts.max(axis=0)
    pad = 2.0 * (hi - lo) / (np.array(meshing.resolution) - 1)
    merged_cfg = MeshingConfig(meshing.resolution, lo - pad, hi + pad,
                               meshing.iso, meshing.gradient_step)
    merged = marching_cubes(joint, merged_cfg, workers=workers)
    merged = vertex_normals(merged, joint, merged_cfg.effective_gradient_step())
    if len(merged.vertices):
        merged = colorize(merged, joint, "opposite_normal")
    if decimate_cell:
        merged = decimate(merged, decimate_cell)
    return merged, diagnostics


def load_reference_frames(bundle: VideoBundle,
                          intr: CameraIntrinsics) -> list[tuple[int, Image, Pose]]:
    """Reference frames: PPM files when present, else rendered from the field."""
    frames = []
    if bundle.frames_dir is not None:
        for fid in sorted(bundle.poses):
            p = Path(bundle.frames_dir) / f"frame_{fid:04d}.ppm"
            if not p.exists():
                raise StageInputMissing(f"reference frame missing: {p}")
            frames.append((fid, load_ppm(p), bundle.poses[fid]))
        return frames
    for fid in sorted(bundle.poses):
        pose = bundle.poses[fid]
        frames.append((fid, raytrace_field(bundle.field, intr, pose), pose))
    return frames


def run_eval(mesh: TriangleMesh, bundle: VideoBundle, eval_cfg: EvalConfig,
             workers: int = 1, pose_scale: float = 1.0) -> EvalOutcome:
    """Score a mesh against the bundle's reference frames.

    ``pose_scale`` lifts the reconstruction-frame camera centers to the
    mesh's units (the bundle's estimated metric scale when evaluating a
    scaled or merged mesh; 1 for raw fragments). Reference images are
    scale-invariant, so only the rerendering pose changes.
    """
    frames = load_reference_frames(bundle, bundle.intrinsics)
    if pose_scale != 1.0:
        frames = [(fid, img, Pose(pose.r, pose.t * pose_scale))
                  for fid, img, pose in frames]
    return evaluate_against_frames(mesh, frames, bundle.intrinsics,
                                   eval_cfg.frame_sample, eval_cfg.seed,
                                   mask_mode=eval_cfg.mask_mode,
                                   workers=workers)


# --- stage wrappers: orchestrate files --------------------------------------------

def _require(path: Path, stage: str) -> Path:
    if not Path(path).exists():
        raise StageInputMissing(f"stage {stage!r} needs missing file: {path}")
    return Path(path)


def stage_mesh(cfg: PipelineConfig) -> list[Path]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for bundle in cfg.bundles:
        mesh = run_mesh(bundle, cfg.meshing, workers=cfg.threads)
        manifest = build_manifest(cfg, list(bundle.input_paths))
        dest = out / f"{bundle.id}_raw.ply"
        save_mesh_ply(dest, mesh, manifest)
        written.append(dest)
    return written


def stage_scale(cfg: PipelineConfig) -> list[Path]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for bundle in cfg.bundles:
        raw_path = _require(out / f"{bundle.id}_raw.ply", "scale")
        mesh, _ = load_mesh_ply(raw_path)
        est = run_scale(bundle)
        manifest = build_manifest(cfg, list(bundle.input_paths) + [raw_path])
        save_scale_estimate(out / f"{bundle.id}_scale.json", est, manifest)
        scaled = apply_scale(mesh, est.mean_scale) if len(mesh.vertices) else mesh
        save_mesh_ply(out / f"{bundle.id}_scaled.ply", scaled, manifest)
        written += [out / f"{bundle.id}_scale.json", out / f"{bundle.id}_scaled.ply"]
    return written


def _load_scaled_fragments(cfg: PipelineConfig, stage: str):
    out = Path(cfg.output_dir)
    fragments = []
    for bundle in cfg.bundles:
        mesh_path = _require(out / f"{bundle.id}_scaled.ply", stage)
        est_path = _require(out / f"{bundle.id}_scale.json", stage)
        mesh, _ = load_mesh_ply(mesh_path)
        est = load_scale_estimate(est_path)
        fragments.append((bundle.id, mesh, bundle.field, est.mean_scale))
    return fragments


def _load_correspondence_sets(cfg: PipelineConfig, stage: str):
    sets = []
    for p in cfg.correspondence_paths:
        sets.append(load_correspondences(_require(p, stage)))
    return sets


def stage_register(cfg: PipelineConfig) -> list[Path]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fragments = {fid: mesh for fid, mesh, _, _
                 in _load_scaled_fragments(cfg, "register")}
    written = []
    for pair in _load_correspondence_sets(cfg, "register"):
        if pair.source_id not in fragments or pair.target_id not in fragments:
            raise ConfigurationError(
                f"correspondences reference unknown fragments "
                f"{pair.source_id!r} -> {pair.target_id!r}")
        pose, diag = register_fragments(fragments[pair.source_id],
                                        fragments[pair.target_id], pair, cfg.icp)
        dest = out / f"{pair.source_id}_to_{pair.target_id}_transform.json"
        icp_res = diag.icp_result
        payload = {
            "source_id": pair.source_id,
            "target_id": pair.target_id,
            "transform": pose.matrix().ravel().tolist(),
            "coarse_rmse": diag.coarse_rmse,
            "rmse": icp_res.rmse if icp_res else diag.coarse_rmse,
            "iterations": icp_res.iterations if icp_res else 0,
            "converged": icp_res.converged if icp_res else False,
            "trace": list(icp_res.rmse_trace) if icp_res else [],
            "coarse_only": diag.coarse_only,
            "low_condition": diag.low_condition,
            "manifest": build_manifest(cfg, [
                out / f"{pair.source_id}_scaled.ply",
                out / f"{pair.target_id}_scaled.ply",
            ]),
        }
        dest.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        written.append(dest)
    return written


def stage_merge(cfg: PipelineConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fragments = _load_scaled_fragments(cfg, "merge")
    if len(fragments) >= 2 and not cfg.correspondence_paths:
        raise ConfigurationError("merge of multiple fragments needs correspondences")
    corr = _load_correspondence_sets(cfg, "merge")
    # Singleton merges re-extract on the fragment's own lattice so the
    # result matches the mesh stage bit for bit (then scaled).
    meshing = cfg.bundles[0].meshing_config(cfg.meshing)
    merged, diagnostics = run_merge(fragments, corr, cfg.icp, meshing,
                                    cfg.decimate_cell, workers=cfg.threads)
    inputs = [Path(cfg.output_dir) / f"{b.id}_scaled.ply" for b in cfg.bundles]
    inputs += list(cfg.correspondence_paths)
    manifest = build_manifest(cfg, inputs)
    dest = out / "merged.ply"
    save_mesh_ply(dest, merged, manifest)
    (out / "merge_diagnostics.json").write_text(
        json.dumps(diagnostics, indent=2, sort_keys=True) + "\n")
    return dest


def stage_eval(cfg: PipelineConfig, mesh_file: Optional[str] = None) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh_path = _require(Path(mesh_file) if mesh_file else out / "merged.ply", "eval")
    mesh, _ = load_mesh_ply(mesh_path)
    bundle = cfg.bundles[0]
    scale_path = _require(out / f"{bundle.id}_scale.json", "eval")
    pose_scale = load_scale_estimate(scale_path).mean_scale
    outcome = run_eval(mesh, bundle, cfg.eval, workers=cfg.threads,
                       pose_scale=pose_scale)
    manifest = build_manifest(cfg, [mesh_path, scale_path, *bundle.input_paths])
    dest = out / "metrics.csv"
    save_metrics_report(dest,
                        [(m.frame_id, m.report) for m in outcome.per_frame],
                        outcome.aggregate, excluded=outcome.excluded,
                        manifest=manifest)
    return dest


# --- synthetic fixtures --------------------------------------------------------------


def _look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    return Pose(np.column_stack([right, down, fwd]), eye)


FIXTURE_INTR = CameraIntrinsics(fx=220.0, fy=220.0, cx=80.0, cy=60.0,
                                width=160, height=120)


def _object_shape(knobs: bool = True):
    parts = [Sphere(np.array([0.0, 0.0, 0.35]), 0.2)]
    if knobs:
        parts.append(Sphere(np.array([0.15, 0.1, 0.38]), 0.09))
        parts.append(Sphere(np.array([-0.14, 0.11, 0.31]), 0.075))
    return ShapeUnion(tuple(parts))


def _scene_field(texture, view_gain=0.0, with_table=True, knobs=True):
    shape = _object_shape(knobs)
    if with_table:
        shape = ShapeUnion((shape,
                            BoxShape(np.array([0.0, 0.0, -0.3]),
                                     np.array([1.5, 1.5, 0.3]))))
    return AnalyticField(shape, texture, view_gain)


def _marker_layout():
    spec = MarkerSpec(rows=4, cols=5, square_size=0.06)
    board_pose = Pose(np.eye(3), np.array([0.35, -0.12, 0.0]))
    return spec, board_pose


def _orbit_pose(angle: float, radius: float = 1.35, height: float = 0.95,
                target=(0.0, 0.0, 0.3)) -> Pose:
    eye = np.array([radius * np.cos(angle), radius * np.sin(angle), height])
    return _look_at(eye, np.asarray(target, dtype=np.float64))


def _marker_camera_pose() -> Pose:
    # Close-in view from +y looking down at the board and object.
    return _look_at(np.array([0.1, 0.95, 0.85]), np.array([0.2, -0.05, 0.0]))


def _write_bundle(dir_path: Path, bundle_id: str, intr: CameraIntrinsics,
                  poses: dict[int, Pose], field: VolumeField,
                  field_kind: str, observations: list[MarkerObservation],
                  frames: Optional[dict[int, Image]] = None) -> dict:
    dir_path.mkdir(parents=True, exist_ok=True)
    save_intrinsics(dir_path / "intrinsics.json", intr)
    save_poses(dir_path / "poses.json", poses)
    save_marker_observations(dir_path / "markers.json", observations)
    if field_kind == "grid":
        field_file = "field.vgrd"
        save_grid(dir_path / field_file, field)  # type: ignore[arg-type]
    else:
        field_file = "field.json"
        save_field_spec(dir_path / field_file, field)
    entry = {
        "id": bundle_id,
        "intrinsics": f"{dir_path.name}/intrinsics.json",
        "poses": f"{dir_path.name}/poses.json",
        "marker_observations": f"{dir_path.name}/markers.json",
        "field": {"kind": field_kind, "path": f"{dir_path.name}/{field_file}"},
    }
    if frames is not None:
        frames_dir = dir_path / "frames"
        frames_dir.mkdir(exist_ok=True)
        for fid, img in frames.items():
            save_ppm(frames_dir / f"frame_{fid:04d}.ppm", img)
        entry["frames_dir"] = f"{dir_path.name}/frames"
    return entry


def _observation_for(intr, cam_pose: Pose, spec, board_pose: Pose,
                     frame_id: int) -> MarkerObservation:
    corners = marker_corners_3d(spec)
    cam_pts = cam_pose.invert().apply(board_pose.apply(corners))
    uv = project(intr, cam_pts)
    return MarkerObservation(frame_id=frame_id, corners2d=uv, spec=spec)


def generate_scale_fixture(out_dir: Path, rho: float = 2.0,
                           grid: bool = False, resolution: int = 48) -> Path:
    """Single-bundle scene authored at metric/reconstruction ratio rho."""
    out_dir = Path(out_dir)
    intr = FIXTURE_INTR
    spec, board_pose = _marker_layout()
    texture = CheckerTexture([0.85, 0.3, 0.2], [0.95, 0.9, 0.85], 0.11)
    metric_field = _scene_field(texture)

    cam_metric = _marker_camera_pose()
    recon_field: VolumeField = PosedScaledField(metric_field, Pose.identity(),
                                                1.0 / rho)
    recon_pose = Pose(cam_metric.r, cam_metric.t / rho)
    if grid:
        lo, hi = recon_field.bounds()
        recon_field = GridField.sample(recon_field, (64, 64, 64), lo, hi)

    obs = _observation_for(intr, cam_metric, spec, board_pose, frame_id=0)
    entry = _write_bundle(out_dir / "video0", "video0", intr,
                          {0: recon_pose}, recon_field,
                          "grid" if grid else "analytic", [obs])

    # Object-only extraction box in reconstruction units (table excluded).
    obj_lo = (np.array([-0.35, -0.35, 0.1])) / rho
    obj_hi = (np.array([0.35, 0.35, 0.62])) / rho
    config = {
        "bundles": [entry],
        "meshing": {"resolution": [resolution] * 3,
                    "bbox_min": obj_lo.tolist(), "bbox_max": obj_hi.tolist()},
        "icp": {"max_correspondence_distance": 0.05},
        "eval": {"frame_sample": 4, "seed": 0, "mask_mode": "object"},
        "output_dir": "out",
    }
    cfg_path = out_dir / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return cfg_path


def generate_pair_fixture(out_dir: Path, rho_a: float = 2.0, rho_b: float = 1.4,
                          resolution: int = 64) -> Path:
    """Two overlapping half-sphere bundles with an authored relative pose.

    Bundle frag0 reconstructs the lower part of the sphere, frag1 the upper
    part, each in its own reconstruction frame and scale. Exact
    correspondences between the scaled fragments are written alongside.
    The object is a plain sphere so the merged mesh has a closed-form
    surface oracle.
    """
    out_dir = Path(out_dir)
    intr = FIXTURE_INTR
    spec, board_pose = _marker_layout()
    texture = CheckerTexture([0.85, 0.3, 0.2], [0.95, 0.9, 0.85], 0.11)
    metric_field = _scene_field(texture, knobs=False)

    # Authored rigid relation: metric w = G(v) for scaled frag1 points v.
    g_auth = Pose(rotation_about(np.array([0.0, 0.0, 1.0]), np.deg2rad(40.0)),
                  np.array([0.12, -0.07, 0.04]))
    cam_metric = _marker_camera_pose()

    entries = []
    for bundle_id, g, rho, z_range in (
            ("frag0", Pose.identity(), rho_a, (0.1, 0.47)),
            ("frag1", g_auth, rho_b, (0.28, 0.62))):
        # Reconstruction frame world' = g^-1(w) / rho, expressed through the
        # scale-then-pose composition the posed field implements:
        # world' = p(w / rho) with p = (g.r^T, -g.r^T t / rho).
        p = Pose(g.r.T, -(g.r.T @ g.t) / rho)
        recon_field = PosedScaledField(metric_field, p, 1.0 / rho)
        recon_pose = Pose(p.r @ cam_metric.r, p.apply(cam_metric.t / rho))
        obs = _observation_for(intr, cam_metric, spec, board_pose, frame_id=0)
        entry = _write_bundle(out_dir / bundle_id, bundle_id, intr,
                              {0: recon_pose}, recon_field, "analytic", [obs])
        # Object region of this fragment, expressed in its own frame.
        lo_m = np.array([-0.35, -0.35, z_range[0]])
        hi_m = np.array([0.35, 0.35, z_range[1]])
        corners = np.array([[x, y, z] for x in (lo_m[0], hi_m[0])
                            for y in (lo_m[1], hi_m[1])
                            for z in (lo_m[2], hi_m[2])])
        local = p.apply(corners / rho)
        entry["meshing_bbox"] = {"min": local.min(axis=0).tolist(),
                                 "max": local.max(axis=0).tolist()}
        entries.append(entry)

    # Exact correspondences on the shared band, in scaled-fragment frames
    # (the scaled fragments are metric-sized, frag1 still in its own axes).
    band_pts = []
    for ang, z in ((0.0, 0.35), (2.1, 0.3), (4.2, 0.4), (1.0, 0.44)):
        r = np.sqrt(max(0.2 ** 2 - (z - 0.35) ** 2, 1e-6))
        band_pts.append([r * np.cos(ang), r * np.sin(ang), z])
    band = np.asarray(band_pts)
    corr = CorrespondenceSet("frag1", "frag0", g_auth.invert().apply(band), band)
    save_correspondences(out_dir / "corr_frag1_frag0.json", corr)

    config = {
        "bundles": entries,
        "meshing": {"resolution": [resolution] * 3,
                    "bbox_min": entries[0]["meshing_bbox"]["min"],
                    "bbox_max": entries[0]["meshing_bbox"]["max"]},
        "icp": {"max_correspondence_distance": 0.04, "max_iterations": 120,
                "rel_rmse_tolerance": 1e-10},
        "eval": {"frame_sample": 4, "seed": 0, "mask_mode": "object"},
        "output_dir": "out",
        "correspondences": ["corr_frag1_frag0.json"],
    }
    cfg_path = out_dir / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return cfg_path


def generate_eval_fixture(out_dir: Path, view_gain: float = 0.0,
                          n_frames: int = 12, resolution: int = 48) -> Path:
    """Single bundle with orbiting reference frames rendered from the field."""
    out_dir = Path(out_dir)
    intr = FIXTURE_INTR
    spec, board_pose = _marker_layout()
    texture = ConstantTexture([0.8, 0.62, 0.45])
    field = _scene_field(texture, view_gain=view_gain)

    poses = {}
    frames = {}
    for i in range(n_frames):
        ang = 2.0 * np.pi * i / n_frames
        pose = _orbit_pose(ang)
        poses[i] = pose
        frames[i] = raytrace_field(field, intr, pose)
    marker_frame = n_frames
    poses[marker_frame] = _marker_camera_pose()
    frames[marker_frame] = raytrace_field(field, intr, poses[marker_frame])
    obs = _observation_for(intr, poses[marker_frame], spec, board_pose,
                           frame_id=marker_frame)

    entry = _write_bundle(out_dir / "video0", "video0", intr, poses, field,
                          "analytic", [obs], frames=frames)
    config = {
        "bundles": [entry],
        "meshing": {"resolution": [resolution] * 3,
                    "bbox_min": [-0.35, -0.35, 0.1],
                    "bbox_max": [0.35, 0.35, 0.62]},
        "icp": {"max_correspondence_distance": 0.05},
        "eval": {"frame_sample": 6, "seed": 0, "mask_mode": "object"},
        "output_dir": "out",
    }
    cfg_path = out_dir / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return cfg_path
