"""Rigid transforms, the distorted pinhole camera, and planar marker pose.

Conventions
-----------
* Right-handed camera axes following OpenCV: +x right, +y down, +z forward.
* Stored camera extrinsics map camera coordinates to world coordinates
  (camera-to-world). Use :meth:`Pose.invert` to go the other way.
* Pixel coordinates have (0, 0) at the top-left pixel's origin; the center
  of pixel (i, j) is at (i + 0.5, j + 0.5).

Points are plain float64 numpy arrays of shape (3,); most functions also
accept batches of shape (n, 3) and return matching shapes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    InsufficientPoints,
    NoConvergence,
    NonPositiveDepth,
)

# Normalization of rotations kicks in when the orthonormality defect of a
# composed rotation exceeds this.
ORTHO_TOL = 1e-9


def _as_batch(pts) -> tuple[np.ndarray, bool]:
    a = np.asarray(pts, dtype=np.float64)
    if a.ndim == 1:
        return a[None, :], True
    return a, False


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a near-rotation 3x3 matrix onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


def rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation matrix for a right-handed rotation about a unit axis."""
    w = np.asarray(axis, dtype=np.float64)
    w = w / np.linalg.norm(w)
    k = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix from an axis-angle vector (angle = |w|)."""
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        k = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
        return np.eye(3) + k
    return rotation_about(w, theta)


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians.

    atan2 of the skew part against the trace; well conditioned at both 0
    and pi, unlike the plain arccos form.
    """
    s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.arctan2(s, c))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation ``r`` (3x3) followed by translation ``t``.

    The implied homogeneous matrix has ``m[:3, :3] = r``, ``m[:3, 3] = t``
    and bottom row [0, 0, 0, 1].
    """

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("pose entries must be finite")
        defect = np.abs(r.T @ r - np.eye(3)).max()
        if defect > ORTHO_TOL:
            raise ValueError(f"rotation not orthonormal (defect {defect:.3g})")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-12:
            raise ValueError("bottom row must be [0, 0, 0, 1]")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def compose(self, other: "Pose") -> "Pose":
        """Transform applying ``other`` first, then this pose."""
        r = self.r @ other.r
        # Long composition chains accumulate drift; snap back when needed.
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL:
            r = nearest_rotation(r)
        return Pose(r, self.r @ other.t + self.t)

    def invert(self) -> "Pose":
        return Pose(self.r.T, -(self.r.T @ self.t))

    def apply(self, pts) -> np.ndarray:
        """Apply to one point (3,) or a batch (n, 3)."""
        a, single = _as_batch(pts)
        out = a @ self.r.T + self.t
        return out[0] if single else out


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera with the 9-parameter radial/tangential distortion model."""

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    width: int = 0
    height: int = 0

    def __post_init__(self):
        vals = [self.fx, self.fy, self.cx, self.cy,
                self.k1, self.k2, self.k3, self.p1, self.p2]
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def _distort_normalized(intr: CameraIntrinsics, x: np.ndarray, y: np.ndarray):
    r2 = x * x + y * y
    radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
    xd = x * radial + 2.0 * intr.p1 * x * y + intr.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + intr.p1 * (r2 + 2.0 * y * y) + 2.0 * intr.p2 * x * y
    return xd, yd


def project(intr: CameraIntrinsics, p_cam) -> np.ndarray:
    """Project camera-frame points to pixel coordinates (u, v).

    Raises NonPositiveDepth for any point with z <= 0.
    """
    a, single = _as_batch(p_cam)
    z = a[:, 2]
    if np.any(z <= 0.0):
        raise NonPositiveDepth("projection requires z > 0")
    x = a[:, 0] / z
    y = a[:, 1] / z
    xd, yd = _distort_normalized(intr, x, y)
    uv = np.stack([intr.fx * xd + intr.cx, intr.fy * yd + intr.cy], axis=-1)
    return uv[0] if single else uv


def _distortion_jacobian(intr: CameraIntrinsics, x: float, y: float) -> np.ndarray:
    # d(xd, yd)/d(x, y) for the forward distortion map.
    r2 = x * x + y * y
    radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
    dradial = intr.k1 + 2.0 * intr.k2 * r2 + 3.0 * intr.k3 * r2 * r2
    jxx = radial + x * (2.0 * x) * dradial + 2.0 * intr.p1 * y + 6.0 * intr.p2 * x
    jxy = x * (2.0 * y) * dradial + 2.0 * intr.p1 * x + 2.0 * intr.p2 * y
    jyx = y * (2.0 * x) * dradial + 2.0 * intr.p2 * y + 2.0 * intr.p1 * x
    jyy = radial + y * (2.0 * y) * dradial + 6.0 * intr.p1 * y + 2.0 * intr.p2 * x
    return np.array([[jxx, jxy], [jyx, jyy]])


UNDISTORT_MAX_ITERATIONS = 50
UNDISTORT_STEP_TOL = 1e-10
# Residual target on normalized coordinates; keeps the pixel-space round trip
# below 1e-8 px for focal lengths up to several thousand.
UNDISTORT_RESIDUAL_TOL = 1e-12


def undistort(intr: CameraIntrinsics, pixel) -> np.ndarray:
    """Invert the camera model: pixel -> normalized ray direction (x, y, 1).

    Fixed-point iteration on the normalized coordinates, with a Newton
    polish for strongly distorted points where plain fixed point stalls.
    """
    arr = np.asarray(pixel, dtype=np.float64)
    single = arr.ndim == 1
    a = arr[None, :] if single else arr
    if not np.isfinite(a).all():
        raise ValueError("pixel coordinates must be finite")
    xt = (a[:, 0] - intr.cx) / intr.fx
    yt = (a[:, 1] - intr.cy) / intr.fy
    x = xt.copy()
    y = yt.copy()
    for _ in range(UNDISTORT_MAX_ITERATIONS):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
        x_new = (xt - (2.0 * intr.p1 * x * y + intr.p2 * (r2 + 2.0 * x * x))) / radial
        y_new = (yt - (intr.p1 * (r2 + 2.0 * y * y) + 2.0 * intr.p2 * x * y)) / radial
        step = max(np.abs(x_new - x).max(), np.abs(y_new - y).max())
        x, y = x_new, y_new
        if step < UNDISTORT_STEP_TOL:
            break
    xd, yd = _distort_normalized(intr, x, y)
    res = np.hypot(xd - xt, yd - yt)
    bad = np.where(res > UNDISTORT_RESIDUAL_TOL)[0]
    for i in bad:
        xi, yi = _newton_undistort(intr, xt[i], yt[i], x[i], y[i])
        x[i], y[i] = xi, yi
    out = np.stack([x, y, np.ones_like(x)], axis=-1)
    return out[0] if single else out


def _radial_seed(intr: CameraIntrinsics, xt: float, yt: float) -> tuple[float, float]:
    # 1D inverse of the radial polynomial along the target direction; the
    # tangential terms are small enough that this lands in Newton's basin.
    rt = float(np.hypot(xt, yt))
    if rt < 1e-12:
        return xt, yt

    def fwd(r):
        r2 = r * r
        return r * (1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3)))

    rmax = 2.0 * max(rt, 1.0)
    grid = np.linspace(0.0, rmax, 2048)
    curve = fwd(grid)
    # The preimage may live on the sign-flipped branch when the radial factor
    # goes negative inside the search range; try both targets.
    for target, direction in ((rt, 1.0), (-rt, -1.0)):
        vals = curve - target
        sign_change = np.nonzero(vals[:-1] * vals[1:] <= 0.0)[0]
        if len(sign_change) == 0:
            continue
        lo, hi = grid[sign_change[0]], grid[sign_change[0] + 1]
        flo = fwd(lo) - target
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            fm = fwd(mid) - target
            if flo * fm <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fm
        r = 0.5 * (lo + hi)
        return direction * xt * r / rt, direction * yt * r / rt
    return xt, yt


def _newton_undistort(intr: CameraIntrinsics, xt: float, yt: float,
                      x0: float, y0: float) -> tuple[float, float]:
    def residual(x, y):
        xd, yd = _distort_normalized(intr, np.float64(x), np.float64(y))
        return xd - xt, yd - yt

    def damped_newton(x, y):
        rx, ry = residual(x, y)
        cost = rx * rx + ry * ry
        for _ in range(50):
            if max(abs(rx), abs(ry)) < UNDISTORT_RESIDUAL_TOL:
                return x, y
            j = _distortion_jacobian(intr, x, y)
            det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
            if abs(det) < 1e-14:
                return None
            dx = (j[1, 1] * rx - j[0, 1] * ry) / det
            dy = (-j[1, 0] * rx + j[0, 0] * ry) / det
            scale = 1.0
            for _ in range(20):
                xn, yn = x - scale * dx, y - scale * dy
                rxn, ryn = residual(xn, yn)
                cn = rxn * rxn + ryn * ryn
                if cn < cost:
                    x, y, rx, ry, cost = xn, yn, rxn, ryn, cn
                    break
                scale *= 0.5
            else:
                return None
        return (x, y) if max(abs(rx), abs(ry)) < 1e-9 else None

    # The radial seed dodges the fold of non-monotone radial polynomials
    # where the fixed-point iterate strands Newton on a singular Jacobian.
    for start in (_radial_seed(intr, xt, yt), (x0, y0)):
        hit = damped_newton(*start)
        if hit is not None:
            return hit
    raise NoConvergence(
        f"undistortion did not converge for normalized target ({xt:.4g}, {yt:.4g})")


@dataclass(frozen=True)
class MarkerSpec:
    """Planar checkerboard description: inner-corner grid and square size."""

    rows: int
    cols: int
    square_size: float
    anchor_index: int = 0

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("marker grid needs at least 2x2 inner corners")
        if self.square_size <= 0:
            raise ValueError("square_size must be positive")
        if not (0 <= self.anchor_index < self.rows * self.cols):
            raise ValueError("anchor_index out of range")


def marker_corners_3d(spec: MarkerSpec) -> np.ndarray:
    """Board-frame corner positions: row-major grid in the z=0 plane.

    Corner (row r, col c) sits at (c * square_size, r * square_size, 0).
    """
    cc, rr = np.meshgrid(np.arange(spec.cols), np.arange(spec.rows))
    pts = np.stack([cc.ravel(), rr.ravel(), np.zeros(spec.rows * spec.cols)],
                   axis=-1).astype(np.float64)
    return pts * spec.square_size


def _homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """DLT homography src -> dst (both (n, 2)), with Hartley normalization."""
    def normalizer(p):
        mean = p.mean(axis=0)
        scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(p - mean, axis=1)), 1e-12)
        T = np.array([[scale, 0.0, -scale * mean[0]],
                      [0.0, scale, -scale * mean[1]],
                      [0.0, 0.0, 1.0]])
        return T

    Ts, Td = normalizer(src), normalizer(dst)
    s = (src @ Ts[:2, :2].T) + Ts[:2, 2]
    d = (dst @ Td[:2, :2].T) + Td[:2, 2]
    n = len(src)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = s
    A[0::2, 2] = 1.0
    A[0::2, 6:8] = -d[:, [0]] * s
    A[0::2, 8] = -d[:, 0]
    A[1::2, 3:5] = s
    A[1::2, 5] = 1.0
    A[1::2, 6:8] = -d[:, [1]] * s
    A[1::2, 8] = -d[:, 1]
    _, sv, vt = np.linalg.svd(A)
    if sv[-2] < 1e-12 * max(sv[0], 1e-300):
        raise DegenerateConfiguration("homography system is rank deficient")
    h = vt[-1].reshape(3, 3)
    return np.linalg.inv(Td) @ h @ Ts


def _collinear(pts: np.ndarray, tol: float = 1e-9) -> bool:
    c = pts - pts.mean(axis=0)
    sv = np.linalg.svd(c, compute_uv=False)
    return sv[1] <= tol * max(sv[0], 1e-300)


def reprojection_rmse(corners3d: np.ndarray, corners2d: np.ndarray,
                      intr: CameraIntrinsics, pose: Pose) -> float:
    """RMS pixel distance between projected board corners and detections."""
    cam = pose.apply(corners3d)
    uv = project(intr, cam)
    return float(np.sqrt(np.mean(np.sum((uv - corners2d) ** 2, axis=1))))


SOLVE_MAX_ITERATIONS = 100
SOLVE_STEP_TOL = 1e-12


def solve_marker_pose(corners3d, corners2d, intr: CameraIntrinsics,
                      max_reproj_px: float | None = None) -> Pose:
    """Solve the camera-from-board pose of a planar marker.

    Homography from undistorted normalized coordinates, decomposed to an
    initial rotation/translation, then Gauss-Newton refinement of the full
    pixel reprojection error. The returned pose maps board coordinates into
    the camera frame; the whole board must land in front of the camera.
    """
    p3 = np.asarray(corners3d, dtype=np.float64).reshape(-1, 3)
    p2 = np.asarray(corners2d, dtype=np.float64).reshape(-1, 2)
    if len(p3) != len(p2):
        raise ValueError("corner lists must have equal length")
    if len(p3) < 4:
        raise InsufficientPoints(f"need at least 4 corners, got {len(p3)}")
    if not (np.isfinite(p3).all() and np.isfinite(p2).all()):
        raise ValueError("corners must be finite")
    if _collinear(p3):
        raise DegenerateConfiguration("3D corners are collinear")
    if _collinear(p2):
        raise DegenerateConfiguration("detected corners are collinear")

    # Express the board in an in-plane basis (handles any coplanar input).
    centroid = p3.mean(axis=0)
    u, sv, vt = np.linalg.svd(p3 - centroid)
    if sv[2] > 1e-9 * sv[0]:
        raise DegenerateConfiguration("3D corners are not coplanar")
    basis = vt[:2]  # rows span the plane
    plane = (p3 - centroid) @ basis.T

    rays = undistort(intr, p2)
    norm_xy = rays[:, :2]
    H = _homography_dlt(plane, norm_xy)

    h1, h2, h3 = H[:, 0], H[:, 1], H[:, 2]
    lam = 2.0 / max(np.linalg.norm(h1) + np.linalg.norm(h2), 1e-300)
    r1, r2, t = lam * h1, lam * h2, lam * h3
    if t[2] < 0:  # board must sit in front of the camera
        r1, r2, t = -r1, -r2, -t
    r_plane = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    # Fold the plane basis back into a full board-frame rotation.
    plane_to_board = np.vstack([basis, np.cross(basis[0], basis[1])[None, :]])
    r0 = r_plane @ plane_to_board
    t0 = t - r0 @ centroid

    pose = _refine_pose(p3, p2, intr, r0, t0)
    cam_pts = pose.apply(p3)
    if np.any(cam_pts[:, 2] <= 0):
        raise BehindCamera("board corners behind the camera after refinement")
    if max_reproj_px is not None:
        rmse = reprojection_rmse(p3, p2, intr, pose)
        if rmse > max_reproj_px:
            raise DegenerateConfiguration(
                f"reprojection error {rmse:.3g} px exceeds {max_reproj_px:.3g} px")
    return pose


def _refine_pose(p3, p2, intr, r0, t0) -> Pose:
    """Gauss-Newton on pixel reprojection over (axis-angle, translation)."""
    r, t = nearest_rotation(r0), np.asarray(t0, dtype=np.float64).copy()

    def residuals(rm, tv):
        cam = p3 @ rm.T + tv
        z = cam[:, 2]
        if np.any(z <= 1e-9):
            return None
        uv = project(intr, cam)
        return (uv - p2).ravel()

    res = residuals(r, t)
    if res is None:
        raise BehindCamera("initial board pose places corners behind the camera")
    cost = float(res @ res)
    eps = 1e-7
    for _ in range(SOLVE_MAX_ITERATIONS):
        jac = np.empty((len(res), 6))
        for k in range(6):
            dp = np.zeros(6)
            dp[k] = eps
            rp = so3_exp(dp[:3]) @ r
            rm = so3_exp(-dp[:3]) @ r
            fp = residuals(rp, t + dp[3:])
            fm = residuals(rm, t - dp[3:])
            if fp is None or fm is None:
                fp = res if fp is None else fp
                fm = res if fm is None else fm
            jac[:, k] = (fp - fm) / (2.0 * eps)
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        # Backtracking keeps the iteration stable for noisy corners.
        scale = 1.0
        for _ in range(12):
            r_new = so3_exp(scale * step[:3]) @ r
            t_new = t + scale * step[3:]
            res_new = residuals(r_new, t_new)
            if res_new is not None and float(res_new @ res_new) <= cost:
                break
            scale *= 0.5
        else:
            break
        r, t, res = nearest_rotation(r_new), t_new, res_new
        cost = float(res @ res)
        if np.linalg.norm(step) * scale < SOLVE_STEP_TOL:
            break
    return Pose(r, t)
