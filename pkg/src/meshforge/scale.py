"""Metric scale recovery from a fiducial marker observation.

The physical anchor position comes from solving the marker pose against
the known board geometry; the reconstruction-space position of the same
point comes from ray-marching the volume field through the anchor pixel.
Both are expressed in the camera frame of the observing frame, so the
ratio of their norms is the metric-per-reconstruction-unit scale.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateReconPoint, EmptyInput, NonPositiveScale, RayMiss
from .fields import VolumeField, ray_march
from .geometry import (
    CameraIntrinsics,
    MarkerSpec,
    Pose,
    marker_corners_3d,
    project,
    solve_marker_pose,
    undistort,
)
from .mesher import TriangleMesh


@dataclass(frozen=True)
class MarkerObservation:
    """Detected inner-corner pixels of the marker in one video frame."""

    frame_id: int
    corners2d: np.ndarray
    spec: MarkerSpec

    def __post_init__(self):
        c = np.asarray(self.corners2d, dtype=np.float64).reshape(-1, 2)
        if len(c) != self.spec.rows * self.spec.cols:
            raise ValueError(
                f"expected {self.spec.rows * self.spec.cols} corners, got {len(c)}")
        if not np.isfinite(c).all():
            raise ValueError("corner pixels must be finite")
        object.__setattr__(self, "corners2d", c)


@dataclass(frozen=True)
class ScaleEstimate:
    per_frame: tuple[tuple[int, float], ...]
    mean_scale: float

    def __post_init__(self):
        object.__setattr__(self, "per_frame", tuple(
            (int(f), float(s)) for f, s in self.per_frame))
        if any(s <= 0 for _, s in self.per_frame):
            raise ValueError("per-frame scales must be positive")
        expected = float(np.mean([s for _, s in self.per_frame]))
        if abs(self.mean_scale - expected) > 1e-12 * max(expected, 1.0):
            raise ValueError("mean_scale must be the arithmetic mean")


# Reprojection sanity bound for operator-supplied marker detections.
MARKER_MAX_REPROJ_PX = 5.0


def metric_marker_point(obs: MarkerObservation, intr: CameraIntrinsics,
                        max_reproj_px: float = MARKER_MAX_REPROJ_PX) -> np.ndarray:
    """Camera-frame position (meters) of the marker's anchor corner."""
    corners3d = marker_corners_3d(obs.spec)
    pose = solve_marker_pose(corners3d, obs.corners2d, intr,
                             max_reproj_px=max_reproj_px)
    return pose.apply(corners3d[obs.spec.anchor_index])


def recon_marker_point(f: VolumeField, intr: CameraIntrinsics, pose: Pose,
                       pixel) -> np.ndarray:
    """Camera-frame position (field units) of the surface seen at a pixel.

    ``pose`` is the camera-to-world transform of the same frame in
    reconstruction space. Raises RayMiss when the ray exits the field
    bounds without crossing the surface.
    """
    px = np.asarray(pixel, dtype=np.float64).reshape(2)
    ray_cam = undistort(intr, px)
    ray_cam = ray_cam / np.linalg.norm(ray_cam)
    origin = pose.t
    direction = pose.r @ ray_cam
    hit = ray_march(f, origin, direction)
    if hit is None:
        raise RayMiss(f"no surface along the ray through pixel ({px[0]:.1f}, {px[1]:.1f})")
    return pose.invert().apply(hit)


def estimate_scale(pairs: Sequence[tuple[np.ndarray, np.ndarray]],
                   frame_ids: Optional[Sequence[int]] = None) -> ScaleEstimate:
    """Per-frame scale = |metric point| / |reconstruction point|; mean over frames."""
    if len(pairs) == 0:
        raise EmptyInput("no point pairs")
    if frame_ids is None:
        frame_ids = list(range(len(pairs)))
    per_frame = []
    for fid, (p_metric, p_recon) in zip(frame_ids, pairs):
        norm_recon = float(np.linalg.norm(p_recon))
        if norm_recon <= 1e-12:
            raise DegenerateReconPoint(
                f"reconstruction point of frame {fid} is at the camera origin")
        per_frame.append((int(fid), float(np.linalg.norm(p_metric)) / norm_recon))
    mean = float(np.mean([s for _, s in per_frame]))
    return ScaleEstimate(tuple(per_frame), mean)


def apply_scale(mesh: TriangleMesh, s: float) -> TriangleMesh:
    """Uniformly scale vertex positions; faces, normals, colors unchanged."""
    if s <= 0:
        raise NonPositiveScale(f"scale must be positive, got {s}")
    return TriangleMesh(mesh.vertices * s, mesh.faces,
                        mesh.normals if mesh.has_normals else None,
                        mesh.colors if mesh.has_colors else None)


def scale_pair_for_observation(obs: MarkerObservation, intr: CameraIntrinsics,
                               field: VolumeField, recon_pose: Pose,
                               pixel=None) -> tuple[np.ndarray, np.ndarray]:
    """Metric and reconstruction anchor points for one observation.

    The ray pixel defaults to the reprojection of the solved anchor; an
    operator can override it to aim at a different surface feature.
    """
    p_metric = metric_marker_point(obs, intr)
    if pixel is None:
        pixel = project(intr, p_metric)
    p_recon = recon_marker_point(field, intr, recon_pose, pixel)
    return p_metric, p_recon
