"""Queryable volumetric fields: the stand-in for a trained reconstruction.

A field exposes a scalar level-set value (negative inside, zero on the
surface), a view-conditioned RGB color, and an axis-aligned bounding box.
Three concrete flavors:

* :class:`AnalyticField` — exact signed distances of a CSG tree of
  primitives, with procedural texture and optional view-dependent shading.
* :class:`GridField` — trilinear interpolation over a voxel lattice.
* :class:`PosedScaledField` — a similarity-transformed wrapper used to
  place fragments into a common frame before merging.

All queries accept single points (3,) or batches (n, 3).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyUnion
from .geometry import Pose

Bounds = tuple[np.ndarray, np.ndarray]


def _batch(p) -> tuple[np.ndarray, bool]:
    a = np.asarray(p, dtype=np.float64)
    if a.ndim == 1:
        return a[None, :], True
    return a, False


# --- CSG shapes ----------------------------------------------------------------

class Shape:
    """Signed-distance node. Subclasses implement sdf() and aabb()."""

    def sdf(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def aabb(self) -> Bounds:
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(Shape):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def sdf(self, p):
        return np.linalg.norm(p - self.center, axis=-1) - self.radius

    def aabb(self):
        r = self.radius
        return self.center - r, self.center + r


@dataclass(frozen=True)
class BoxShape(Shape):
    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "half_extents",
                           np.asarray(self.half_extents, dtype=np.float64))
        if np.any(self.half_extents <= 0):
            raise ValueError("box half extents must be positive")

    def sdf(self, p):
        q = np.abs(p - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def aabb(self):
        return self.center - self.half_extents, self.center + self.half_extents


@dataclass(frozen=True)
class Cylinder(Shape):
    """Capped cylinder aligned with one coordinate axis (0=x, 1=y, 2=z)."""

    center: np.ndarray
    axis: int
    radius: float
    half_height: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")
        if self.radius <= 0 or self.half_height <= 0:
            raise ValueError("cylinder dimensions must be positive")

    def sdf(self, p):
        rel = p - self.center
        perp = np.delete(rel, self.axis, axis=-1)
        d_r = np.linalg.norm(perp, axis=-1) - self.radius
        d_h = np.abs(rel[..., self.axis]) - self.half_height
        q = np.stack([d_r, d_h], axis=-1)
        return np.minimum(q.max(axis=-1), 0.0) + np.linalg.norm(np.maximum(q, 0.0), axis=-1)

    def aabb(self):
        ext = np.full(3, self.radius)
        ext[self.axis] = self.half_height
        return self.center - ext, self.center + ext


@dataclass(frozen=True)
class Torus(Shape):
    """Torus around the z axis through its center."""

    center: np.ndarray
    major_radius: float
    minor_radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.major_radius <= 0 or self.minor_radius <= 0:
            raise ValueError("torus radii must be positive")
        if self.minor_radius >= self.major_radius:
            raise ValueError("minor radius must be smaller than major radius")

    def sdf(self, p):
        rel = p - self.center
        ring = np.hypot(np.linalg.norm(rel[..., :2], axis=-1) - self.major_radius,
                        rel[..., 2])
        return ring - self.minor_radius

    def aabb(self):
        r = self.major_radius + self.minor_radius
        ext = np.array([r, r, self.minor_radius])
        return self.center - ext, self.center + ext


@dataclass(frozen=True)
class Union(Shape):
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("union needs at least one part")

    def sdf(self, p):
        vals = [s.sdf(p) for s in self.parts]
        return np.minimum.reduce(vals)

    def aabb(self):
        boxes = [s.aabb() for s in self.parts]
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
        return lo, hi


@dataclass(frozen=True)
class Intersection(Shape):
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("intersection needs at least one part")

    def sdf(self, p):
        vals = [s.sdf(p) for s in self.parts]
        return np.maximum.reduce(vals)

    def aabb(self):
        boxes = [s.aabb() for s in self.parts]
        lo = np.max([b[0] for b in boxes], axis=0)
        hi = np.min([b[1] for b in boxes], axis=0)
        return lo, np.maximum(hi, lo + 1e-12)


@dataclass(frozen=True)
class Difference(Shape):
    base: Shape
    cut: Shape

    def sdf(self, p):
        return np.maximum(self.base.sdf(p), -self.cut.sdf(p))

    def aabb(self):
        return self.base.aabb()


# --- textures -------------------------------------------------------------------

class Texture:
    def rgb(self, p: np.ndarray, bounds: Bounds) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantTexture(Texture):
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64))

    def rgb(self, p, bounds):
        return np.broadcast_to(self.color, p.shape).copy()


@dataclass(frozen=True)
class CheckerTexture(Texture):
    color_a: np.ndarray
    color_b: np.ndarray
    period: float

    def __post_init__(self):
        object.__setattr__(self, "color_a", np.asarray(self.color_a, dtype=np.float64))
        object.__setattr__(self, "color_b", np.asarray(self.color_b, dtype=np.float64))
        if self.period <= 0:
            raise ValueError("checker period must be positive")

    def rgb(self, p, bounds):
        parity = np.floor(p / self.period).sum(axis=-1).astype(np.int64) % 2
        return np.where(parity[..., None] == 0, self.color_a, self.color_b)


@dataclass(frozen=True)
class AxisGradientTexture(Texture):
    color_a: np.ndarray
    color_b: np.ndarray
    axis: int

    def __post_init__(self):
        object.__setattr__(self, "color_a", np.asarray(self.color_a, dtype=np.float64))
        object.__setattr__(self, "color_b", np.asarray(self.color_b, dtype=np.float64))
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")

    def rgb(self, p, bounds):
        lo, hi = bounds
        span = max(hi[self.axis] - lo[self.axis], 1e-12)
        t = np.clip((p[..., self.axis] - lo[self.axis]) / span, 0.0, 1.0)
        return self.color_a + t[..., None] * (self.color_b - self.color_a)


# --- field contract --------------------------------------------------------------

class VolumeField:
    """Scalar level set + view-conditioned color over an axis-aligned box.

    ``lipschitz_unit`` advertises that |scalar| is a lower bound on the
    distance to the zero set, enabling sphere tracing.
    """

    lipschitz_unit: bool = False

    def scalar(self, p) -> np.ndarray:
        raise NotImplementedError

    def color(self, p, d) -> np.ndarray:
        raise NotImplementedError

    def bounds(self) -> Bounds:
        raise NotImplementedError

    def suggested_step(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo)) / 1024.0


def sample_scalar(f: VolumeField, p) -> np.ndarray:
    """Level-set value at p; negative inside, zero on the surface."""
    return f.scalar(p)


def gradient(f: VolumeField, p, h: float) -> np.ndarray:
    """Central-difference gradient of the scalar field, step h per axis."""
    if h <= 0:
        raise ValueError("step must be positive")
    a, single = _batch(p)
    out = np.empty_like(a)
    for axis in range(3):
        dp = np.zeros(3)
        dp[axis] = h
        out[:, axis] = (f.scalar(a + dp) - f.scalar(a - dp)) / (2.0 * h)
    return out[0] if single else out


class AnalyticField(VolumeField):
    """Exact CSG signed distances with procedural vertex color.

    ``view_gain`` blends a view-dependent factor into the texture color:
    effective = color * (1 - g + g * max(0, -d . n)) with n the unit
    outward normal. g = 0 reproduces a plain diffuse (view independent)
    field; g = 1 makes the color vanish for back-facing query directions.
    """

    lipschitz_unit = True

    def __init__(self, shape: Shape, texture: Texture | None = None,
                 view_gain: float = 0.0, bounds_pad: float = 1e-9):
        if not 0.0 <= view_gain <= 1.0:
            raise ValueError("view_gain must lie in [0, 1]")
        self.shape = shape
        self.texture = texture or ConstantTexture(np.array([0.7, 0.7, 0.7]))
        self.view_gain = float(view_gain)
        lo, hi = shape.aabb()
        pad = bounds_pad * max(np.linalg.norm(hi - lo), 1.0)
        self._bounds = (lo - pad, hi + pad)
        self.normal_step = 1e-6 * max(float(np.linalg.norm(hi - lo)), 1e-6)

    def scalar(self, p):
        a, single = _batch(p)
        v = self.shape.sdf(a)
        return v[0] if single else v

    def bounds(self):
        return self._bounds

    def normals(self, p) -> np.ndarray:
        a, single = _batch(p)
        g = gradient(self, a, self.normal_step)
        n = np.linalg.norm(g, axis=-1, keepdims=True)
        g = np.where(n > 1e-15, g / np.maximum(n, 1e-300), np.array([0.0, 0.0, 1.0]))
        return g[0] if single else g

    def color(self, p, d):
        a, single = _batch(p)
        base = np.clip(self.texture.rgb(a, self._bounds), 0.0, 1.0)
        if self.view_gain > 0.0:
            dv, _ = _batch(d)
            dv = np.broadcast_to(dv, a.shape)
            n = self.normals(a)
            facing = np.maximum(0.0, -np.sum(dv * n, axis=-1))
            factor = 1.0 - self.view_gain + self.view_gain * facing
            base = base * factor[..., None]
        base = np.clip(base, 0.0, 1.0)
        return base[0] if single else base


class GridField(VolumeField):
    """Voxel lattice with trilinear interpolation, edge-clamped outside.

    ``scalars`` has shape (nx, ny, nz); ``colors`` (nx, ny, nz, 3). Surfaces
    must stay strictly inside the bounding box: queries beyond it clamp to
    the boundary values, so the level set never closes outside.
    """

    lipschitz_unit = False

    def __init__(self, bbox_min, bbox_max, scalars: np.ndarray,
                 colors: Optional[np.ndarray] = None):
        lo = np.asarray(bbox_min, dtype=np.float64)
        hi = np.asarray(bbox_max, dtype=np.float64)
        s = np.asarray(scalars, dtype=np.float64)
        if s.ndim != 3 or min(s.shape) < 2:
            raise ValueError("scalar grid must be 3-D with at least 2 nodes per axis")
        if np.any(hi <= lo):
            raise ValueError("bbox must have positive extent per axis")
        if colors is None:
            colors = np.full(s.shape + (3,), 0.7)
        c = np.asarray(colors, dtype=np.float64)
        if c.shape != s.shape + (3,):
            raise ValueError("color grid shape must match scalar grid")
        self._lo, self._hi = lo, hi
        self._scalars = s
        self._colors = c
        self.dims = s.shape
        self._cell = (hi - lo) / (np.array(s.shape) - 1)

    def _trilinear(self, values: np.ndarray, p: np.ndarray) -> np.ndarray:
        dims = np.array(self.dims)
        g = (p - self._lo) / self._cell
        g = np.clip(g, 0.0, dims - 1)
        i0 = np.minimum(g.astype(np.int64), dims - 2)
        frac = g - i0
        ix, iy, iz = i0[..., 0], i0[..., 1], i0[..., 2]
        fx, fy, fz = (frac[..., k] for k in range(3))
        if values.ndim == 4:
            fx, fy, fz = fx[..., None], fy[..., None], fz[..., None]

        def v(dx, dy, dz):
            return values[ix + dx, iy + dy, iz + dz]

        c00 = v(0, 0, 0) * (1 - fx) + v(1, 0, 0) * fx
        c10 = v(0, 1, 0) * (1 - fx) + v(1, 1, 0) * fx
        c01 = v(0, 0, 1) * (1 - fx) + v(1, 0, 1) * fx
        c11 = v(0, 1, 1) * (1 - fx) + v(1, 1, 1) * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz

    def scalar(self, p):
        a, single = _batch(p)
        v = self._trilinear(self._scalars, a)
        return v[0] if single else v

    def color(self, p, d):
        a, single = _batch(p)
        v = np.clip(self._trilinear(self._colors, a), 0.0, 1.0)
        return v[0] if single else v

    def bounds(self):
        return self._lo.copy(), self._hi.copy()

    def suggested_step(self) -> float:
        return float(self._cell.min()) / 2.0

    @classmethod
    def sample(cls, f: VolumeField, dims: Sequence[int],
               bbox_min=None, bbox_max=None) -> "GridField":
        """Bake any field onto a lattice (scalar and diffuse color)."""
        lo, hi = f.bounds()
        lo = np.asarray(bbox_min, dtype=np.float64) if bbox_min is not None else lo
        hi = np.asarray(bbox_max, dtype=np.float64) if bbox_max is not None else hi
        nx, ny, nz = dims
        xs = np.linspace(lo[0], hi[0], nx)
        ys = np.linspace(lo[1], hi[1], ny)
        zs = np.linspace(lo[2], hi[2], nz)
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=-1)
        scalars = f.scalar(pts).reshape(nx, ny, nz)
        # Colors are baked view-free: the canonical query (opposite normal)
        # is what downstream colorization asks for anyway.
        if isinstance(f, AnalyticField):
            dirs = -f.normals(pts)
        else:
            dirs = np.zeros_like(pts)
            dirs[:, 2] = 1.0
        colors = f.color(pts, dirs).reshape(nx, ny, nz, 3)
        return cls(lo, hi, scalars, colors)


@dataclass(frozen=True)
class PosedScaledField(VolumeField):
    """A base field uniformly scaled then rigidly posed into a common frame.

    World point p corresponds to base point pose^-1(p) / scale; the scalar
    is multiplied by scale so signed distances stay metrically consistent.
    """

    base: VolumeField
    pose: Pose
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def lipschitz_unit(self) -> bool:  # type: ignore[override]
        return self.base.lipschitz_unit

    def _to_base(self, p: np.ndarray) -> np.ndarray:
        return self.pose.invert().apply(p) / self.scale

    def scalar(self, p):
        a, single = _batch(p)
        v = self.scale * self.base.scalar(self._to_base(a))
        return v[0] if single else v

    def color(self, p, d):
        a, single = _batch(p)
        dv, _ = _batch(d)
        dv = np.broadcast_to(dv, a.shape)
        v = self.base.color(self._to_base(a), dv @ self.pose.r)
        return v[0] if single else v

    def bounds(self):
        lo, hi = self.base.bounds()
        corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                            for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        world = self.pose.apply(corners * self.scale)
        return world.min(axis=0), world.max(axis=0)

    def suggested_step(self) -> float:
        return self.base.suggested_step() * self.scale


class UnionField(VolumeField):
    """Pointwise minimum over posed parts; color from the winning part."""

    def __init__(self, parts: Sequence[VolumeField]):
        parts = list(parts)
        if not parts:
            raise EmptyUnion("union of zero fields")
        self.parts = parts
        self.lipschitz_unit = all(p.lipschitz_unit for p in parts)

    def scalar(self, p):
        a, single = _batch(p)
        vals = np.stack([f.scalar(a) for f in self.parts])
        v = vals.min(axis=0)
        return v[0] if single else v

    def color(self, p, d):
        a, single = _batch(p)
        dv, _ = _batch(d)
        dv = np.broadcast_to(dv, a.shape)
        vals = np.stack([f.scalar(a) for f in self.parts])
        winner = vals.argmin(axis=0)
        out = np.empty_like(a)
        for i, f in enumerate(self.parts):
            mask = winner == i
            if np.any(mask):
                out[mask] = f.color(a[mask], dv[mask])
        return out[0] if single else out

    def bounds(self):
        boxes = [f.bounds() for f in self.parts]
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
        return lo, hi

    def suggested_step(self) -> float:
        return min(f.suggested_step() for f in self.parts)


def union_field(parts: Sequence[VolumeField]) -> UnionField:
    """Join posed fragment fields into one; see :class:`UnionField`."""
    return UnionField(parts)


# --- ray marching -----------------------------------------------------------------

_SPHERE_TRACE_CAP = 4096
_BISECTION_STEPS = 40


def _ray_box(origin, direction, lo, hi) -> Optional[tuple[float, float]]:
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / direction
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2)).max()
    tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2)).min()
    if tmax < tmin:
        return None
    return float(tmin), float(tmax)


def _bisect(f: VolumeField, origin, direction, t_lo, t_hi, s_lo, steps) -> float:
    for _ in range(steps):
        mid = 0.5 * (t_lo + t_hi)
        sm = float(f.scalar(origin + mid * direction))
        if (s_lo > 0) == (sm > 0) and sm != 0.0:
            t_lo, s_lo = mid, sm
        else:
            t_hi = mid
    return 0.5 * (t_lo + t_hi)


def ray_march(f: VolumeField, origin, direction) -> Optional[np.ndarray]:
    """First zero crossing of the field along a unit-direction ray.

    Sphere tracing for fields that declare a unit Lipschitz bound, fixed
    stepping plus bisection otherwise. Returns the hit point or None when
    the ray leaves the bounds without a sign change.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("ray direction must be unit length")
    lo, hi = f.bounds()
    diag = float(np.linalg.norm(hi - lo))
    span = _ray_box(origin, direction, lo, hi)
    if span is None:
        return None
    t0, t1 = max(span[0], 0.0), span[1]
    if t1 <= t0:
        return None

    s0 = float(f.scalar(origin + t0 * direction))
    if s0 == 0.0:
        return origin + t0 * direction

    if f.lipschitz_unit and s0 > 0.0:
        eps = 1e-7 * diag
        t = t0
        s = s0
        for _ in range(_SPHERE_TRACE_CAP):
            if s <= eps:
                # Bracket the crossing, then polish to high precision.
                t_hi = t + max(s, eps)
                s_hi = float(f.scalar(origin + t_hi * direction))
                tries = 0
                while s_hi > 0.0 and tries < 64 and t_hi <= t1 + eps:
                    t_hi += max(s_hi, eps) * 1.5
                    s_hi = float(f.scalar(origin + t_hi * direction))
                    tries += 1
                if s_hi > 0.0:
                    break  # grazing pass, no crossing here; resume below
                hit_t = _bisect(f, origin, direction, t, t_hi, s, 60)
                return origin + hit_t * direction
            t += s
            if t > t1:
                return None
            s = float(f.scalar(origin + t * direction))
        # Stalled (grazing incidence): fall through to fixed stepping from t.
        t0, s0 = t, s

    step = max(f.suggested_step(), 1e-9 * diag)
    t_prev, s_prev = t0, s0
    t = t0
    while t < t1:
        t = min(t + step, t1)
        s = float(f.scalar(origin + t * direction))
        if s == 0.0:
            return origin + t * direction
        if (s_prev > 0) != (s > 0):
            hit_t = _bisect(f, origin, direction, t_prev, t, s_prev, _BISECTION_STEPS)
            return origin + hit_t * direction
        t_prev, s_prev = t, s
        if t >= t1:
            break
    return None


def ray_march_batch(f: VolumeField, origins: np.ndarray,
                    directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ray march for camera-frame rendering of a truth field.

    Returns (points (n, 3), hit mask (n,)). Uses the same hybrid scheme as
    :func:`ray_march`, run breadth-first over all rays.
    """
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    n = len(origins)
    hits = np.zeros((n, 3))
    ok = np.zeros(n, dtype=bool)
    lo, hi = f.bounds()

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        ta = (lo - origins) * inv
        tb = (hi - origins) * inv
    near = np.where(np.isnan(ta) | np.isnan(tb), -np.inf, np.minimum(ta, tb))
    far = np.where(np.isnan(ta) | np.isnan(tb), np.inf, np.maximum(ta, tb))
    t0 = np.maximum(near.max(axis=1), 0.0)
    t1 = far.min(axis=1)
    valid = t1 > t0
    idx = np.nonzero(valid)[0]
    if len(idx) == 0:
        return hits, ok

    if not f.lipschitz_unit:
        for gi in idx:
            p = ray_march(f, origins[gi], directions[gi])
            if p is not None:
                hits[gi] = p
                ok[gi] = True
        return hits, ok

    diag = float(np.linalg.norm(hi - lo))
    eps = 1e-7 * diag
    o = origins[idx]
    d = directions[idx]
    t = t0[idx].copy()
    t_end = t1[idx]
    s = f.scalar(o + t[:, None] * d)
    started_inside = s <= 0.0
    active = ~started_inside
    found = np.zeros(len(idx), dtype=bool)
    escaped = np.zeros(len(idx), dtype=bool)
    found_lo = np.zeros(len(idx))
    found_slo = np.zeros(len(idx))
    for _ in range(2048):
        ai = np.nonzero(active)[0]
        if len(ai) == 0:
            break
        hit_rows = ai[s[ai] <= eps]
        if len(hit_rows):
            found[hit_rows] = True
            found_lo[hit_rows] = t[hit_rows]
            found_slo[hit_rows] = s[hit_rows]
            active[hit_rows] = False
            ai = np.nonzero(active)[0]
            if len(ai) == 0:
                break
        t[ai] += s[ai]
        out_rows = ai[t[ai] > t_end[ai]]
        escaped[out_rows] = True
        active[out_rows] = False
        ai = np.nonzero(active)[0]
        if len(ai):
            s[ai] = f.scalar(o[ai] + t[ai, None] * d[ai])

    rows = np.nonzero(found)[0]
    if len(rows):
        # Vectorized bracket expansion then bisection over all hit rays.
        t_lo = found_lo[rows].copy()
        s_lo = found_slo[rows].copy()
        t_hi = t_lo + np.maximum(s_lo, eps)
        s_hi = f.scalar(o[rows] + t_hi[:, None] * d[rows])
        for _ in range(64):
            open_rows = s_hi > 0.0
            if not open_rows.any():
                break
            t_hi[open_rows] += np.maximum(s_hi[open_rows], eps) * 1.5
            s_hi[open_rows] = f.scalar(o[rows][open_rows]
                                       + t_hi[open_rows, None] * d[rows][open_rows])
        bracketed = s_hi <= 0.0
        br = rows[bracketed]
        if len(br):
            lo_t = t_lo[bracketed].copy()
            lo_s = s_lo[bracketed].copy()
            hi_t = t_hi[bracketed].copy()
            ob, db = o[br], d[br]
            for _ in range(60):
                mid = 0.5 * (lo_t + hi_t)
                sm = f.scalar(ob + mid[:, None] * db)
                same = ((lo_s > 0) == (sm > 0)) & (sm != 0.0)
                lo_t = np.where(same, mid, lo_t)
                lo_s = np.where(same, sm, lo_s)
                hi_t = np.where(same, hi_t, mid)
            ht = 0.5 * (lo_t + hi_t)
            gi = idx[br]
            hits[gi] = ob + ht[:, None] * db
            ok[gi] = True

    # Rays that started inside, stalled at the cap, or found a near-surface
    # point without bracketing (grazing): per-ray fallback. Confirmed
    # escapes are genuine misses and are skipped.
    needs_fallback = (started_inside | active | (found & ~ok[idx])) & ~escaped
    for gi in idx[np.nonzero(needs_fallback)[0]]:
        if ok[gi]:
            continue
        p = ray_march(f, origins[gi], directions[gi])
        if p is not None:
            hits[gi] = p
            ok[gi] = True
    return hits, ok
