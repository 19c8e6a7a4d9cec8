"""Coarse correspondence alignment, point-to-point ICP, fragment registration.

Coarse registration solves the closed-form least-squares similarity (or
rigid transform) from operator-picked point pairs via cross-covariance SVD
with a determinant-sign correction, so reflections are never produced.
ICP then alternates k-d tree nearest-neighbor matching with the same
closed-form rigid solve.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateConfiguration,
    EmptyCloud,
    InsufficientPairs,
    NoCorrespondences,
)
from .geometry import Pose, nearest_rotation
from .mesher import TriangleMesh

# Cross-covariance singular value ratio below which the rotation is
# considered unobservable (e.g. sphere-on-sphere alignment).
CONDITION_THRESHOLD = 1e-6


@dataclass(frozen=True)
class CorrespondenceSet:
    """Operator-picked matching points between two fragments."""

    source_id: str
    target_id: str
    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.src, dtype=np.float64).reshape(-1, 3)
        d = np.asarray(self.dst, dtype=np.float64).reshape(-1, 3)
        if len(s) != len(d):
            raise ValueError("src and dst pair counts differ")
        if not (np.isfinite(s).all() and np.isfinite(d).all()):
            raise ValueError("correspondence points must be finite")
        object.__setattr__(self, "src", s)
        object.__setattr__(self, "dst", d)

    def __len__(self) -> int:
        return len(self.src)


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    max_correspondence_distance: float = np.inf
    rel_rmse_tolerance: float = 1e-6
    sample_count: int = 0  # 0 = use every source point

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.max_correspondence_distance > 0:
            raise ValueError("max_correspondence_distance must be positive")
        if not self.rel_rmse_tolerance > 0:
            raise ValueError("rel_rmse_tolerance must be positive")
        if self.sample_count < 0:
            raise ValueError("sample_count must be >= 0")


@dataclass(frozen=True)
class RigidResult:
    pose: Pose
    rmse: float
    iterations: int
    converged: bool
    rmse_trace: tuple[float, ...] = ()
    low_condition: bool = False

    def __post_init__(self):
        if self.rmse < 0 or self.iterations < 0:
            raise ValueError("rmse and iterations must be nonnegative")


def _umeyama(src: np.ndarray, dst: np.ndarray,
             with_scale: bool) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """Least-squares similarity s*R*src + t ~= dst. Returns (R, t, s, svals)."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    sc = src - mu_s
    dc = dst - mu_d
    cov = dc.T @ sc / len(src)
    u, svals, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    s_fix = np.diag([1.0, 1.0, sign if sign != 0 else 1.0])
    r = u @ s_fix @ vt
    if with_scale:
        var_s = np.mean(np.sum(sc * sc, axis=1))
        scale = float(np.trace(np.diag(svals) @ s_fix) / max(var_s, 1e-300))
    else:
        scale = 1.0
    t = mu_d - scale * (r @ mu_s)
    return nearest_rotation(r), t, scale, svals


def align_correspondences(c: CorrespondenceSet,
                          with_scale: bool = False) -> tuple[Pose, float]:
    """Closed-form alignment of picked pairs; returns (pose, scale).

    With ``with_scale`` the full similarity is estimated; otherwise the
    rigid transform (scale pinned to 1). Requires at least three pairs
    with non-collinear sources.
    """
    if len(c) < 3:
        raise InsufficientPairs(
            f"coarse registration needs at least 3 pairs, got {len(c)}")
    centered = c.src - c.src.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateConfiguration("source correspondence points are collinear")
    r, t, s, _ = _umeyama(c.src, c.dst, with_scale)
    return Pose(r, t), s


def _stratified_indices(n: int, k: int) -> np.ndarray:
    # Deterministic subsample keyed by vertex index: evenly strided picks.
    if k <= 0 or k >= n:
        return np.arange(n)
    return np.unique((np.arange(k, dtype=np.int64) * n) // k)


def icp(source: np.ndarray, target: np.ndarray, init: Pose,
        params: IcpParams = IcpParams()) -> RigidResult:
    """Point-to-point ICP refining ``init`` so source maps onto target.

    Matches beyond max_correspondence_distance are dropped; iteration stops
    at max_iterations or when the relative RMSE change over the matched set
    falls below rel_rmse_tolerance. The reported RMSE covers the final
    matched set after the last alignment update.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if len(src) == 0 or len(dst) == 0:
        raise EmptyCloud("ICP requires non-empty source and target clouds")
    src = src[_stratified_indices(len(src), params.sample_count)]

    tree = cKDTree(dst)
    pose = init
    trace: list[float] = []
    converged = False
    svals = None
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        moved = pose.apply(src)
        dist, nn = tree.query(moved)
        keep = dist <= params.max_correspondence_distance
        if not np.any(keep):
            raise NoCorrespondences(
                "all nearest-neighbor matches exceeded max_correspondence_distance")
        matched_src = src[keep]
        matched_dst = dst[nn[keep]]
        r, t, _, svals = _umeyama(matched_src, matched_dst, with_scale=False)
        pose = Pose(r, t)
        resid = pose.apply(matched_src) - matched_dst
        rmse = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
        trace.append(rmse)
        if rmse < 1e-15:
            converged = True
            break
        if len(trace) >= 2:
            prev = trace[-2]
            if abs(prev - rmse) <= params.rel_rmse_tolerance * max(prev, 1e-300):
                converged = True
                break
    low_cond = bool(svals is not None
                    and svals[2] <= CONDITION_THRESHOLD * max(svals[0], 1e-300))
    return RigidResult(pose, trace[-1], iterations, converged,
                       tuple(trace), low_cond)


@dataclass(frozen=True)
class RegistrationDiagnostics:
    coarse_rmse: float
    icp_result: Optional[RigidResult]
    coarse_only: bool
    low_condition: bool


def register_fragments(src: TriangleMesh, dst: TriangleMesh, c: CorrespondenceSet,
                       params: IcpParams = IcpParams()) -> tuple[Pose, RegistrationDiagnostics]:
    """Coarse rigid alignment from picks, refined with ICP on the vertices.

    Fragments must already be at a uniform scale. Returns the transform
    mapping the source fragment into the target frame plus diagnostics;
    when ICP rejects every match the coarse result is returned and flagged.
    """
    coarse, _ = align_correspondences(c, with_scale=False)
    resid = coarse.apply(c.src) - c.dst
    coarse_rmse = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    try:
        result = icp(src.vertices, dst.vertices, coarse, params)
    except NoCorrespondences:
        diag = RegistrationDiagnostics(coarse_rmse, None, True, False)
        return coarse, diag
    diag = RegistrationDiagnostics(coarse_rmse, result, False, result.low_condition)
    return result.pose, diag
