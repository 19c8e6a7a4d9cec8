"""Isosurface extraction, normals, view-direction colorization, decimation.

Extraction walks a regular lattice with the classic 256-case cube table.
Vertices are welded through exact lattice-edge keys (owning lattice vertex
plus axis), never floating-point proximity, so meshes from fields whose
level set stays inside the box are closed and extraction is deterministic
for any worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MissingNormals
from .fields import VolumeField, gradient
from .geometry import Pose
from .mctables import CORNER_OFFSETS, EDGE_ANCHOR, EDGE_AXIS, TRI_TABLE

_SLAB_PLANES = 17  # lattice planes per sampling slab (fixed: not worker-dependent)


@dataclass(frozen=True)
class TriangleMesh:
    """Vertices, faces, and optional per-vertex unit normals and RGB colors.

    Arrays are float64/int64; ``normals``/``colors`` are empty (0, 3) arrays
    when absent. Instances are treated as immutable values.
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray = None  # type: ignore[assignment]
    colors: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        n = (np.zeros((0, 3)) if self.normals is None
             else np.asarray(self.normals, dtype=np.float64).reshape(-1, 3))
        c = (np.zeros((0, 3)) if self.colors is None
             else np.asarray(self.colors, dtype=np.float64).reshape(-1, 3))
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face indices out of range")
        if len(f) and (np.any(f[:, 0] == f[:, 1]) or np.any(f[:, 1] == f[:, 2])
                       or np.any(f[:, 0] == f[:, 2])):
            raise ValueError("degenerate face with repeated vertex index")
        if len(n) not in (0, len(v)):
            raise ValueError("normals length must match vertices")
        if len(n):
            mag = np.linalg.norm(n, axis=1)
            if np.abs(mag - 1.0).max() > 1e-6:
                raise ValueError("normals must be unit length")
        if len(c) not in (0, len(v)):
            raise ValueError("colors length must match vertices")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "colors", c)

    @property
    def has_normals(self) -> bool:
        return len(self.normals) == len(self.vertices) and len(self.vertices) > 0

    @property
    def has_colors(self) -> bool:
        return len(self.colors) == len(self.vertices) and len(self.vertices) > 0

    @staticmethod
    def empty() -> "TriangleMesh":
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


@dataclass(frozen=True)
class MeshingConfig:
    resolution: tuple[int, int, int]
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    iso: float = 0.0
    gradient_step: float = 0.0  # 0 -> half the smallest lattice cell

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        if min(res) < 2:
            raise ValueError("resolution must be at least 2 per axis")
        lo = np.asarray(self.bbox_min, dtype=np.float64)
        hi = np.asarray(self.bbox_max, dtype=np.float64)
        if np.any(hi <= lo):
            raise ValueError("bbox must have positive extent")
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "bbox_min", lo)
        object.__setattr__(self, "bbox_max", hi)

    @property
    def cell(self) -> np.ndarray:
        return (self.bbox_max - self.bbox_min) / (np.array(self.resolution) - 1)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.cell))

    def effective_gradient_step(self) -> float:
        if self.gradient_step > 0:
            return self.gradient_step
        return float(self.cell.min()) / 2.0


def _sample_lattice(f: VolumeField, cfg: MeshingConfig, workers: int) -> np.ndarray:
    nx, ny, nz = cfg.resolution
    xs = np.linspace(cfg.bbox_min[0], cfg.bbox_max[0], nx)
    ys = np.linspace(cfg.bbox_min[1], cfg.bbox_max[1], ny)
    zs = np.linspace(cfg.bbox_min[2], cfg.bbox_max[2], nz)

    def sample_slab(z_lo: int) -> np.ndarray:
        z_hi = min(z_lo + _SLAB_PLANES, nz)
        gx, gy, gz = np.meshgrid(xs, ys, zs[z_lo:z_hi], indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=-1)
        return f.scalar(pts).reshape(nx, ny, z_hi - z_lo)

    starts = list(range(0, nz, _SLAB_PLANES))
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            slabs = list(pool.map(sample_slab, starts))
    else:
        slabs = [sample_slab(s) for s in starts]
    return np.concatenate(slabs, axis=2)


def marching_cubes(f: VolumeField, cfg: MeshingConfig, workers: int = 1) -> TriangleMesh:
    """Extract the iso-surface triangle mesh of a field over a lattice.

    Vertices sit on lattice edges at the linear interpolation of the iso
    crossing; shared edges produce index-identical vertices. Faces wind so
    their geometric normals point toward increasing field values.
    """
    scalars = _sample_lattice(f, cfg, workers)
    return _polygonize(scalars, cfg)


def marching_cubes_from_scalars(scalars: np.ndarray, cfg: MeshingConfig) -> TriangleMesh:
    """Polygonize an already-sampled lattice (same contract as above)."""
    return _polygonize(scalars, cfg)


def _polygonize(scalars: np.ndarray, cfg: MeshingConfig) -> TriangleMesh:
    nx, ny, nz = cfg.resolution
    iso = cfg.iso
    inside = scalars < iso

    # Case index per cell from the 8 corner bits.
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint16)
    for bit, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        case |= inside[dx:dx + nx - 1, dy:dy + ny - 1, dz:dz + nz - 1].astype(np.uint16) << bit

    flat_case = case.ravel()
    active = np.nonzero((flat_case != 0) & (flat_case != 255))[0]
    if len(active) == 0:
        return TriangleMesh.empty()

    cells = np.stack(np.unravel_index(active, case.shape), axis=-1)  # (m, 3)
    rows = TRI_TABLE[flat_case[active]]  # (m, 16)
    counts = (rows >= 0).sum(axis=1) // 3

    # Expand to one record per triangle corner, in cell order.
    tri_cell = np.repeat(cells, counts * 3, axis=0)
    edge_local = rows[rows >= 0]  # already row-major == cell order

    # Canonical lattice edge id: owning lattice vertex (i,j,k) and axis.
    anchor = tri_cell + EDGE_ANCHOR[edge_local]
    axis = EDGE_AXIS[edge_local]
    edge_id = ((anchor[:, 0] * ny + anchor[:, 1]) * nz + anchor[:, 2]) * 3 + axis

    unique_ids, corner_vertex = np.unique(edge_id, return_inverse=True)
    faces = corner_vertex.reshape(-1, 3)

    # Interpolate one vertex per unique lattice edge.
    u_axis = (unique_ids % 3).astype(np.int64)
    u_lin = unique_ids // 3
    u_k = u_lin % nz
    u_j = (u_lin // nz) % ny
    u_i = u_lin // (nz * ny)
    p0 = np.stack([u_i, u_j, u_k], axis=-1)
    p1 = p0.copy()
    p1[np.arange(len(p1)), u_axis] += 1
    s0 = scalars[p0[:, 0], p0[:, 1], p0[:, 2]]
    s1 = scalars[p1[:, 0], p1[:, 1], p1[:, 2]]
    denom = s1 - s0
    t = np.where(np.abs(denom) > 0, (iso - s0) / np.where(denom == 0, 1.0, denom), 0.5)
    t = np.clip(t, 0.0, 1.0)

    cell_size = cfg.cell
    lo = cfg.bbox_min
    verts0 = lo + p0 * cell_size
    verts1 = lo + p1 * cell_size
    vertices = verts0 + t[:, None] * (verts1 - verts0)

    # Drop degenerate triangles (distinct lattice edges can share a corner
    # vertex when the crossing lands exactly on a lattice point).
    good = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
            & (faces[:, 0] != faces[:, 2]))
    faces = faces[good]

    # The case table winds faces clockwise when seen from the positive side;
    # swap to make geometric normals point toward increasing field values.
    faces = faces[:, [0, 2, 1]]
    return TriangleMesh(vertices, faces)


def vertex_normals(mesh: TriangleMesh, f: VolumeField,
                   step: Optional[float] = None) -> TriangleMesh:
    """Attach unit normals from the field gradient at each vertex.

    Falls back to the area-weighted average of incident face normals where
    the gradient magnitude vanishes (symmetry centers, saddle points).
    """
    if len(mesh.vertices) == 0:
        return TriangleMesh(mesh.vertices, mesh.faces,
                            np.zeros((0, 3)), mesh.colors if mesh.has_colors else None)
    if step is None:
        lo, hi = f.bounds()
        step = 1e-5 * float(np.linalg.norm(hi - lo))
    g = gradient(f, mesh.vertices, step)
    mag = np.linalg.norm(g, axis=1)
    degenerate = mag < 1e-12
    if np.any(degenerate):
        fallback = _face_average_normals(mesh)
        g[degenerate] = fallback[degenerate]
        mag = np.linalg.norm(g, axis=1)
        still = mag < 1e-12
        g[still] = [0.0, 0.0, 1.0]
        mag = np.linalg.norm(g, axis=1)
    normals = g / mag[:, None]
    return TriangleMesh(mesh.vertices, mesh.faces, normals,
                        mesh.colors if mesh.has_colors else None)


def _face_average_normals(mesh: TriangleMesh) -> np.ndarray:
    v, fc = mesh.vertices, mesh.faces
    acc = np.zeros_like(v)
    if len(fc):
        fn = np.cross(v[fc[:, 1]] - v[fc[:, 0]], v[fc[:, 2]] - v[fc[:, 0]])
        # Cross product magnitude is twice the face area: area weighting for free.
        for col in range(3):
            np.add.at(acc, fc[:, col], fn)
    return acc


def colorize(mesh: TriangleMesh, f: VolumeField, mode: str = "opposite_normal",
             camera_pose: Optional[Pose] = None) -> TriangleMesh:
    """Attach per-vertex colors queried from the field.

    mode "opposite_normal": query direction is the negated vertex normal —
    the canonical head-on color. mode "camera_direction": query along the
    unit vector from the given camera center to each vertex, reproducing the
    view-baked coloring this pipeline improves on.
    """
    if not mesh.has_normals:
        raise MissingNormals("colorize requires vertex normals")
    if mode == "opposite_normal":
        dirs = -mesh.normals
    elif mode == "camera_direction":
        if camera_pose is None:
            raise ValueError("camera_direction mode needs a camera pose")
        rel = mesh.vertices - camera_pose.t
        mag = np.linalg.norm(rel, axis=1, keepdims=True)
        dirs = rel / np.maximum(mag, 1e-300)
    else:
        raise ValueError(f"unknown colorize mode: {mode!r}")
    colors = np.clip(f.color(mesh.vertices, dirs), 0.0, 1.0)
    return TriangleMesh(mesh.vertices, mesh.faces, mesh.normals, colors)


def decimate(mesh: TriangleMesh, cell_size: float) -> TriangleMesh:
    """Vertex-clustering simplification on a uniform grid.

    Cluster representatives are member means; normals and colors average
    (normals renormalized). Faces collapsing inside one cluster and exact
    duplicate faces are dropped.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    if len(mesh.vertices) == 0:
        return mesh
    v = mesh.vertices
    anchor = v.min(axis=0)
    keys = np.floor((v - anchor) / cell_size).astype(np.int64)
    uniq, cluster = np.unique(keys, axis=0, return_inverse=True)
    n_clusters = len(uniq)

    counts = np.bincount(cluster, minlength=n_clusters).astype(np.float64)
    new_v = np.zeros((n_clusters, 3))
    for col in range(3):
        new_v[:, col] = np.bincount(cluster, weights=v[:, col], minlength=n_clusters)
    new_v /= counts[:, None]

    new_n = None
    if mesh.has_normals:
        acc = np.zeros((n_clusters, 3))
        for col in range(3):
            acc[:, col] = np.bincount(cluster, weights=mesh.normals[:, col],
                                      minlength=n_clusters)
        mag = np.linalg.norm(acc, axis=1)
        acc[mag < 1e-12] = [0.0, 0.0, 1.0]
        mag = np.linalg.norm(acc, axis=1)
        new_n = acc / mag[:, None]

    new_c = None
    if mesh.has_colors:
        acc = np.zeros((n_clusters, 3))
        for col in range(3):
            acc[:, col] = np.bincount(cluster, weights=mesh.colors[:, col],
                                      minlength=n_clusters)
        new_c = acc / counts[:, None]

    faces = cluster[mesh.faces]
    keep = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
            & (faces[:, 0] != faces[:, 2]))
    faces = faces[keep]
    if len(faces):
        sorted_faces = np.sort(faces, axis=1)
        _, first = np.unique(sorted_faces, axis=0, return_index=True)
        faces = faces[np.sort(first)]
    return TriangleMesh(new_v, faces, new_n, new_c)


def mesh_volume(mesh: TriangleMesh) -> float:
    """Enclosed volume via the divergence theorem (signed tetrahedra)."""
    v, f = mesh.vertices, mesh.faces
    if len(f) == 0:
        return 0.0
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def edge_face_counts(mesh: TriangleMesh) -> dict[tuple[int, int], int]:
    """Occurrences of each undirected edge over all faces (manifold check)."""
    counts: dict[tuple[int, int], int] = {}
    for tri in mesh.faces:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (int(min(a, b)), int(max(a, b)))
            counts[key] = counts.get(key, 0) + 1
    return counts


def is_closed(mesh: TriangleMesh) -> bool:
    """True when every edge is shared by exactly two faces."""
    if len(mesh.faces) == 0:
        return False
    return all(c == 2 for c in edge_face_counts(mesh).values())
