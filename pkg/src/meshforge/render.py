"""Software rasterizer and the rerendering image metrics.

Rendering conventions, fixed for bit-exact tests:

* Pixel (i, j) is sampled at its center (i + 0.5, j + 0.5), top-left origin.
* Vertices are projected through the full distortion model individually;
  triangle edges stay straight in between (a documented approximation,
  accurate for meshes whose triangles are small against the distortion
  curvature).
* Coverage: inclusive half-plane test against all three edges after
  orienting the screen triangle counterclockwise.
* Attributes interpolate perspective-correct (screen barycentrics divided
  by camera depth, renormalized); the z-buffer keeps the nearest depth,
  earlier faces winning ties.
* No lighting: vertex colors are emitted as-is.

Rasterization is band-parallel: the image is cut into fixed 32-row bands,
each rasterized independently over the full face list and stitched in band
order, so output is identical for any worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    AllFramesExcluded,
    DimensionMismatch,
    EmptyMask,
    MissingColors,
)
from .fields import VolumeField, ray_march_batch
from .geometry import CameraIntrinsics, Pose, _distort_normalized, undistort
from .mesher import TriangleMesh

BAND_ROWS = 32
NEAR_CLIP = 1e-6
PSNR_CAP = 99.0
PSNR_MIN_RMSE = 1e-5
DEPTH_MISS = np.inf


@dataclass(frozen=True)
class Image:
    """Row-major float RGB image with components in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError("pixels must have shape (height, width, 3)")
        if p.size and (p.min() < -1e-12 or p.max() > 1 + 1e-12):
            raise ValueError("pixel components must lie in [0, 1]")
        object.__setattr__(self, "pixels", np.clip(p, 0.0, 1.0))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    psnr: float
    pixel_count: int

    def __post_init__(self):
        if self.mae < 0 or self.rmse < 0:
            raise ValueError("errors must be nonnegative")
        if self.mae > self.rmse + 1e-12:
            raise ValueError("mae cannot exceed rmse")


def psnr_from_rmse(rmse: float) -> float:
    """Peak signal-to-noise ratio in dB for unit-peak images, capped."""
    if rmse < PSNR_MIN_RMSE:
        return PSNR_CAP
    return float(-20.0 * np.log10(rmse))


def _project_for_raster(intr: CameraIntrinsics, pts_cam: np.ndarray):
    z = pts_cam[:, 2]
    valid = z > NEAR_CLIP
    uv = np.zeros((len(pts_cam), 2))
    if np.any(valid):
        x = pts_cam[valid, 0] / z[valid]
        y = pts_cam[valid, 1] / z[valid]
        xd, yd = _distort_normalized(intr, x, y)
        uv[valid, 0] = intr.fx * xd + intr.cx
        uv[valid, 1] = intr.fy * yd + intr.cy
    return uv, z, valid


def _raster_band(y0: int, y1: int, width: int, faces_uv, faces_z, faces_rgb,
                 background: np.ndarray):
    rows = y1 - y0
    color = np.empty((rows, width, 3))
    color[:] = background
    depth = np.full((rows, width), DEPTH_MISS)
    ys_center = np.arange(y0, y1) + 0.5

    for (uv, zc, rgb) in zip(faces_uv, faces_z, faces_rgb):
        v0, v1, v2 = uv
        area = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v1[1] - v0[1]) * (v2[0] - v0[0])
        if area == 0.0:
            continue
        if area < 0.0:  # reorder to counterclockwise in pixel coordinates
            v1, v2 = v2, v1
            zc = zc[[0, 2, 1]]
            rgb = rgb[[0, 2, 1]]
            area = -area
        xmin = max(0, int(np.ceil(min(v0[0], v1[0], v2[0]) - 0.5)))
        xmax = min(width - 1, int(np.floor(max(v0[0], v1[0], v2[0]) - 0.5)))
        ymin = max(y0, int(np.ceil(min(v0[1], v1[1], v2[1]) - 0.5)))
        ymax = min(y1 - 1, int(np.floor(max(v0[1], v1[1], v2[1]) - 0.5)))
        if xmin > xmax or ymin > ymax:
            continue
        px = np.arange(xmin, xmax + 1) + 0.5
        py = ys_center[ymin - y0:ymax - y0 + 1]
        gx, gy = np.meshgrid(px, py)
        w0 = (v2[0] - v1[0]) * (gy - v1[1]) - (v2[1] - v1[1]) * (gx - v1[0])
        w1 = (v0[0] - v2[0]) * (gy - v2[1]) - (v0[1] - v2[1]) * (gx - v2[0])
        w2 = (v1[0] - v0[0]) * (gy - v0[1]) - (v1[1] - v0[1]) * (gx - v0[0])
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        l0 = w0[inside] / area
        l1 = w1[inside] / area
        l2 = w2[inside] / area
        inv_z = l0 / zc[0] + l1 / zc[1] + l2 / zc[2]
        z_pix = 1.0 / inv_z
        iy, ix = np.nonzero(inside)
        rows_idx = iy + (ymin - y0)
        cols_idx = ix + xmin
        closer = z_pix < depth[rows_idx, cols_idx]
        if not closer.any():
            continue
        rows_idx, cols_idx = rows_idx[closer], cols_idx[closer]
        weights = np.stack([l0[closer] / zc[0], l1[closer] / zc[1],
                            l2[closer] / zc[2]], axis=-1)
        col = (weights @ rgb) * z_pix[closer, None]
        depth[rows_idx, cols_idx] = z_pix[closer]
        color[rows_idx, cols_idx] = col
    return color, depth


def rasterize(mesh: TriangleMesh, intr: CameraIntrinsics, pose: Pose,
              background: Sequence[float] = (0.0, 0.0, 0.0),
              workers: int = 1) -> tuple[Image, np.ndarray]:
    """Render a colored mesh seen by a posed camera; returns (image, depth).

    ``pose`` is camera-to-world; unfilled pixels take the background color
    and an infinite depth. Triangles with any vertex at or behind the near
    plane are culled.
    """
    if len(mesh.vertices) and not mesh.has_colors:
        raise MissingColors("rasterize requires per-vertex colors")
    width, height = intr.width, intr.height
    bg = np.clip(np.asarray(background, dtype=np.float64).reshape(3), 0.0, 1.0)

    if len(mesh.faces) == 0:
        color = np.empty((height, width, 3))
        color[:] = bg
        return Image(color), np.full((height, width), DEPTH_MISS)

    cam = pose.invert().apply(mesh.vertices)
    uv, z, valid = _project_for_raster(intr, cam)
    face_ok = valid[mesh.faces].all(axis=1)
    faces = mesh.faces[face_ok]
    faces_uv = uv[faces]
    faces_z = z[faces]
    faces_rgb = np.clip(mesh.colors[faces], 0.0, 1.0)

    bands = [(y, min(y + BAND_ROWS, height)) for y in range(0, height, BAND_ROWS)]
    # Bucket faces by the bands their screen bbox can touch; face order is
    # preserved inside each band, so the partition never affects the output.
    y_lo = faces_uv[:, :, 1].min(axis=1) - 0.5
    y_hi = faces_uv[:, :, 1].max(axis=1) - 0.5

    def run(band):
        y0, y1 = band
        sel = (y_hi >= y0) & (y_lo <= y1 - 1)
        return _raster_band(y0, y1, width, faces_uv[sel], faces_z[sel],
                            faces_rgb[sel], bg)

    if workers > 1 and len(bands) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bands))
    else:
        parts = [run(b) for b in bands]
    color = np.concatenate([p[0] for p in parts], axis=0)
    depth = np.concatenate([p[1] for p in parts], axis=0)
    return Image(color), depth


def compare(rendered: Image, reference: Image,
            mask: Optional[np.ndarray] = None) -> MetricsReport:
    """Masked per-channel MAE/RMSE and PSNR between two images."""
    if (rendered.width, rendered.height) != (reference.width, reference.height):
        raise DimensionMismatch(
            f"image sizes differ: {rendered.width}x{rendered.height} vs "
            f"{reference.width}x{reference.height}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (rendered.height, rendered.width):
            raise DimensionMismatch("mask shape does not match the images")
        if not mask.any():
            raise EmptyMask("comparison mask selects no pixels")
        diff = rendered.pixels[mask] - reference.pixels[mask]
        count = int(mask.sum())
    else:
        diff = (rendered.pixels - reference.pixels).reshape(-1, 3)
        count = rendered.width * rendered.height
    mae = float(np.abs(diff).mean())
    rmse = float(np.sqrt((diff * diff).mean()))
    return MetricsReport(mae, rmse, psnr_from_rmse(rmse), count)


@dataclass(frozen=True)
class FrameMetrics:
    frame_id: int
    report: MetricsReport
    coverage: float


@dataclass(frozen=True)
class EvalOutcome:
    aggregate: MetricsReport
    per_frame: tuple[FrameMetrics, ...]
    excluded: tuple[int, ...]


def evaluate_against_frames(mesh: TriangleMesh,
                            frames: Sequence[tuple[int, Image, Pose]],
                            intr: CameraIntrinsics,
                            frame_sample: int,
                            seed: int,
                            mask_mode: str = "object",
                            coverage_threshold: float = 0.005,
                            background: Sequence[float] = (0.0, 0.0, 0.0),
                            workers: int = 1) -> EvalOutcome:
    """Rerender the mesh at sampled frame poses and compare to references.

    A seeded sample without replacement picks ``frame_sample`` frames (all
    of them when fewer exist). mask_mode "object" restricts the comparison
    to pixels the rendered mesh covers; "full" compares whole frames.
    Frames with coverage below ``coverage_threshold`` are excluded and
    reported. Aggregate MAE/RMSE are unweighted means over kept frames;
    PSNR is recomputed from the mean RMSE.
    """
    if len(frames) == 0:
        raise ValueError("no frames to evaluate against")
    if frame_sample < 1:
        raise ValueError("frame_sample must be >= 1")
    if mask_mode not in ("object", "full"):
        raise ValueError(f"unknown mask_mode: {mask_mode!r}")

    rng = np.random.default_rng(seed)
    if len(frames) > frame_sample:
        picked = np.sort(rng.choice(len(frames), size=frame_sample, replace=False))
    else:
        picked = np.arange(len(frames))

    kept: list[FrameMetrics] = []
    excluded: list[int] = []
    for idx in picked:
        frame_id, reference, pose = frames[idx]
        rendered, depth = rasterize(mesh, intr, pose, background, workers=workers)
        covered = np.isfinite(depth)
        coverage = float(covered.mean())
        if coverage < coverage_threshold:
            excluded.append(frame_id)
            continue
        mask = covered if mask_mode == "object" else None
        report = compare(rendered, reference, mask)
        kept.append(FrameMetrics(frame_id, report, coverage))
    if not kept:
        raise AllFramesExcluded(
            f"all {len(picked)} sampled frames fell below coverage "
            f"{coverage_threshold}")
    mean_mae = float(np.mean([m.report.mae for m in kept]))
    mean_rmse = float(np.mean([m.report.rmse for m in kept]))
    aggregate = MetricsReport(mean_mae, mean_rmse, psnr_from_rmse(mean_rmse),
                              int(sum(m.report.pixel_count for m in kept)))
    return EvalOutcome(aggregate, tuple(kept), tuple(excluded))


def raytrace_field(field: VolumeField, intr: CameraIntrinsics, pose: Pose,
                   background: Sequence[float] = (0.0, 0.0, 0.0)) -> Image:
    """Reference renderer: per-pixel ray march of a truth field.

    Colors are queried along the viewing ray (camera toward surface), which
    is what a physical camera records of a view-dependent surface.
    """
    width, height = intr.width, intr.height
    bg = np.clip(np.asarray(background, dtype=np.float64).reshape(3), 0.0, 1.0)
    us, vs = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    pixels = np.stack([us.ravel(), vs.ravel()], axis=-1)
    rays = undistort(intr, pixels)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    dirs = rays @ pose.r.T
    origins = np.broadcast_to(pose.t, dirs.shape)
    hits, ok = ray_march_batch(field, origins, dirs)
    out = np.empty((height * width, 3))
    out[:] = bg
    if ok.any():
        out[ok] = np.clip(field.color(hits[ok], dirs[ok]), 0.0, 1.0)
    return Image(out.reshape(height, width, 3))
