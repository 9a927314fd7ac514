"""Voxel-SDF grids: TSDF fusion, marching cubes, pseudo-depth, mesh rasterization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._mc_tables import EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .geometry import CameraView, Intrinsics, project_points, ray_directions

_EPS = 1e-9


@dataclass(frozen=True)
class GridGeometry:
    """Placement of a voxel lattice: `origin` is the center of voxel (0,0,0)."""

    origin: np.ndarray
    voxel_size: float
    dims: tuple
    truncation: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if any(d < 1 for d in self.dims):
            raise ValueError("dims components must be >= 1")
        if self.truncation <= 0:
            raise ValueError("truncation must be positive")

    @property
    def num_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def centers(self) -> np.ndarray:
        """World coordinates of all voxel centers, (N, 3) in C index order."""
        nx, ny, nz = self.dims
        ii, jj, kk = np.meshgrid(
            np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
        )
        idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
        return self.origin + self.voxel_size * idx

    def same_lattice(self, other: "GridGeometry", tol=1e-9) -> bool:
        if abs(self.voxel_size - other.voxel_size) > tol:
            return False
        shift = (other.origin - self.origin) / self.voxel_size
        return bool(np.all(np.abs(shift - np.round(shift)) < tol))


@dataclass
class VoxelGrid:
    """SDF samples on a regular lattice with a validity mask.

    `sdf` and `valid` have shape `dims`; invalid voxels carry the truncation
    value as a placeholder. `weight` counts fusion observations.
    """

    geometry: GridGeometry
    sdf: np.ndarray
    valid: np.ndarray
    weight: np.ndarray | None = None

    def __post_init__(self):
        dims = self.geometry.dims
        self.sdf = np.asarray(self.sdf, dtype=float).reshape(dims)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(dims)
        if self.weight is None:
            self.weight = self.valid.astype(float)
        else:
            self.weight = np.asarray(self.weight, dtype=float).reshape(dims)

    @staticmethod
    def constant(geometry: GridGeometry, value: float, valid: bool = True) -> "VoxelGrid":
        dims = geometry.dims
        return VoxelGrid(
            geometry,
            np.full(dims, value, dtype=float),
            np.full(dims, valid, dtype=bool),
        )

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.geometry, self.sdf.copy(), self.valid.copy(), self.weight.copy())

    @property
    def truncation(self) -> float:
        return self.geometry.truncation

    def clamp(self) -> None:
        t = self.geometry.truncation
        np.clip(self.sdf, -t, t, out=self.sdf)


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int
    normals: np.ndarray | None = None  # (V, 3) unit

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=int).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass
class DepthMap:
    """Per-pixel depth in meters; 0 encodes an invalid pixel."""

    depth: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        if self.depth.ndim != 2:
            raise ValueError("depth must be a 2D array")
        if not np.all(np.isfinite(self.depth)) or (self.depth < 0).any():
            raise ValueError("depth must be finite and >= 0")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0


def voxel_center(grid, index) -> np.ndarray:
    """World center of voxel (i, j, k)."""
    geo = grid.geometry if isinstance(grid, VoxelGrid) else grid
    i, j, k = index
    nx, ny, nz = geo.dims
    if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
        raise IndexError(f"voxel index {index} outside dims {geo.dims}")
    return geo.origin + geo.voxel_size * np.array([i, j, k], dtype=float)


def tsdf_fuse(
    views: list[CameraView],
    geometry: GridGeometry,
    *,
    max_depth: float = 3.0,
) -> VoxelGrid:
    """Fuse ground-truth depth maps into a truncated SDF grid.

    Per voxel and view: the projective signed distance is the depth sampled at
    the nearest pixel minus the voxel's camera depth. Observations behind the
    surface past -truncation are skipped (not clamped) so thin surfaces are
    not carved; the rest are clamped to +truncation and averaged with unit
    weight.
    """
    if not views:
        raise ValueError("tsdf_fuse requires at least one view")
    for v in views:
        if v.depth is None:
            raise ValueError("every view needs a ground-truth depth map")
    trunc = geometry.truncation
    centers = geometry.centers()
    n = centers.shape[0]
    acc = np.zeros(n)
    cnt = np.zeros(n)
    for view in views:
        cam = view.pose.apply(centers)
        z = cam[:, 2]
        front = z > _EPS
        u, v, ok = project_points(view.intrinsics, cam)
        ui = np.rint(u).astype(int)
        vi = np.rint(v).astype(int)
        ui = np.clip(ui, 0, view.intrinsics.width - 1)
        vi = np.clip(vi, 0, view.intrinsics.height - 1)
        d = np.asarray(view.depth, dtype=float)[vi, ui]
        sample_ok = (d > 0) & (d <= max_depth)
        sd = d - z
        keep = front & ok & sample_ok & (sd >= -trunc)
        sd = np.minimum(sd, trunc)
        acc[keep] += sd[keep]
        cnt[keep] += 1.0
    valid = cnt > 0
    sdf = np.where(valid, acc / np.maximum(cnt, 1.0), trunc)
    # voxels saturated at the band edge are beyond the truncation distance
    valid &= np.abs(sdf) < trunc - 1e-9
    dims = geometry.dims
    return VoxelGrid(geometry, sdf.reshape(dims), valid.reshape(dims), cnt.reshape(dims))


# --------------------------------------------------------------------------
# marching cubes

# edge e of a cell, as (corner offset ijk, axis) on the lattice
_CORNER_OFFSETS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ]
)


def _edge_keys():
    keys = []
    for a, b in EDGE_CORNERS:
        oa, ob = _CORNER_OFFSETS[a], _CORNER_OFFSETS[b]
        axis = int(np.nonzero(oa != ob)[0][0])
        base = np.minimum(oa, ob)
        keys.append((base, axis))
    return keys


_EDGE_BASE_AXIS = _edge_keys()


def marching_cubes(grid: VoxelGrid, iso: float = 0.0) -> TriangleMesh:
    """Extract the iso level set with the classic 256-case tables.

    Only cells whose 8 corners are all valid emit triangles. Vertices are
    linearly interpolated on lattice edges (the interpolated SDF at every
    vertex equals `iso` exactly) and shared between neighboring cells.
    Degenerate triangles with area <= 1e-12 are dropped.
    """
    nx, ny, nz = grid.geometry.dims
    if min(nx, ny, nz) < 2:
        raise ValueError("marching_cubes needs at least 2 voxels per axis")
    s = grid.sdf - iso
    valid = grid.valid

    inside = (s < 0).astype(np.uint8)
    cell_index = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint8)
    cell_valid = np.ones((nx - 1, ny - 1, nz - 1), dtype=bool)
    for c in range(8):
        oi, oj, ok = _CORNER_OFFSETS[c]
        sl = (
            slice(oi, nx - 1 + oi),
            slice(oj, ny - 1 + oj),
            slice(ok, nz - 1 + ok),
        )
        cell_index |= inside[sl] << c
        cell_valid &= valid[sl]

    active = cell_valid & (cell_index != 0) & (cell_index != 255)
    cells = np.argwhere(active)

    verts: list = []
    tris: list = []
    vert_cache: dict = {}
    origin = grid.geometry.origin
    vs = grid.geometry.voxel_size

    for ci, cj, ck in cells:
        case = int(cell_index[ci, cj, ck])
        edges_mask = EDGE_TABLE[case]
        edge_vert = [-1] * 12
        for e in range(12):
            if not (edges_mask & (1 << e)):
                continue
            base, axis = _EDGE_BASE_AXIS[e]
            key = (ci + base[0], cj + base[1], ck + base[2], axis)
            vid = vert_cache.get(key)
            if vid is None:
                a, b = EDGE_CORNERS[e]
                oa, ob = _CORNER_OFFSETS[a], _CORNER_OFFSETS[b]
                va = s[ci + oa[0], cj + oa[1], ck + oa[2]]
                vb = s[ci + ob[0], cj + ob[1], ck + ob[2]]
                t = va / (va - vb)
                pa = origin + vs * np.array([ci + oa[0], cj + oa[1], ck + oa[2]], dtype=float)
                pb = origin + vs * np.array([ci + ob[0], cj + ob[1], ck + ob[2]], dtype=float)
                vid = len(verts)
                verts.append(pa + t * (pb - pa))
                vert_cache[key] = vid
            edge_vert[e] = vid
        tri_spec = TRI_TABLE[case]
        for k in range(0, len(tri_spec), 3):
            tris.append(
                (edge_vert[tri_spec[k]], edge_vert[tri_spec[k + 1]], edge_vert[tri_spec[k + 2]])
            )

    if not tris:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int), np.zeros((0, 3)))

    vertices = np.array(verts)
    triangles = np.array(tris, dtype=int)

    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    cross = np.cross(b - a, c - a)
    area = 0.5 * np.linalg.norm(cross, axis=1)
    keep = area > 1e-12
    triangles = triangles[keep]
    cross = cross[keep]

    used = np.zeros(len(vertices), dtype=bool)
    used[triangles.ravel()] = True
    remap = -np.ones(len(vertices), dtype=int)
    remap[used] = np.arange(used.sum())
    vertices = vertices[used]
    triangles = remap[triangles]

    normals = np.zeros_like(vertices)
    for col in range(3):
        np.add.at(normals, triangles[:, col], cross)
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.where(norm > _EPS, norm, 1.0)
    # isolated fallback; cannot occur for vertices of non-degenerate triangles
    normals[norm[:, 0] <= _EPS] = (0.0, 0.0, 1.0)
    return TriangleMesh(vertices, triangles, normals)


# --------------------------------------------------------------------------
# SDF pseudo-depth


@dataclass
class PseudoDepth:
    """Sparse depth splatted from SDF surface points, with provenance.

    `source` holds the flat voxel index that won each pixel (-1 elsewhere)
    and `dz_dsdf` the derivative of the written depth w.r.t. that voxel's
    SDF value (the camera-z component of its unit ray).
    """

    depth: DepthMap
    source: np.ndarray
    dz_dsdf: np.ndarray


def sdf_pseudo_depth(grid: VoxelGrid, view: CameraView, *, with_source: bool = False):
    """Project SDF-implied surface points into a view as a sparse depth map.

    Each valid voxel's surface point (voxel center pushed by its signed SDF
    along the camera ray) is splatted to the nearest pixel; the minimum depth
    wins when several voxels land on one pixel.
    """
    intr = view.intrinsics
    h, w = intr.height, intr.width
    depth = np.zeros((h, w))
    source = -np.ones((h, w), dtype=int)
    dzds = np.zeros((h, w))

    flat_valid = grid.valid.ravel()
    if flat_valid.any():
        idx = np.nonzero(flat_valid)[0]
        centers = grid.geometry.centers()[idx]
        sdf = grid.sdf.ravel()[idx]
        cam = view.pose.apply(centers)
        dirs, ok = ray_directions(cam)
        surf = cam + sdf[:, None] * dirs
        zs = surf[:, 2]
        u, v, inb = project_points(intr, surf)
        keep = ok & inb & (zs > _EPS)
        if keep.any():
            ui = np.clip(np.rint(u[keep]).astype(int), 0, w - 1)
            vi = np.clip(np.rint(v[keep]).astype(int), 0, h - 1)
            zk = zs[keep]
            order = np.argsort(-zk, kind="stable")  # nearest written last wins
            pix = vi[order] * w + ui[order]
            depth.ravel()[pix] = zk[order]
            source.ravel()[pix] = idx[keep][order]
            dzds.ravel()[pix] = dirs[keep, 2][order]
    result = PseudoDepth(DepthMap(depth), source, dzds)
    return result if with_source else result.depth


# --------------------------------------------------------------------------
# mesh depth rendering


def render_mesh_depth(mesh: TriangleMesh, view: CameraView | None = None, *, intrinsics=None, pose=None) -> DepthMap:
    """Z-buffer rasterization of a mesh into a camera (nearest surface wins).

    Depth is perspective-correct (1/z interpolated in screen space). Triangles
    with any vertex at or behind the camera are skipped; no near-plane
    clipping is attempted.
    """
    if view is not None:
        intrinsics, pose = view.intrinsics, view.pose
    intr: Intrinsics = intrinsics
    h, w = intr.height, intr.width
    zbuf = np.full((h, w), np.inf)
    if not mesh.is_empty:
        cam = pose.apply(mesh.vertices)
        z = cam[:, 2]
        u = intr.fx * cam[:, 0] / np.where(z > _EPS, z, 1.0) + intr.cx
        v = intr.fy * cam[:, 1] / np.where(z > _EPS, z, 1.0) + intr.cy
        inv_z = 1.0 / np.where(z > _EPS, z, 1.0)
        tri_ok = np.all(z[mesh.triangles] > _EPS, axis=1)
        for t0, t1, t2 in mesh.triangles[tri_ok]:
            u0, u1, u2 = u[t0], u[t1], u[t2]
            v0, v1, v2 = v[t0], v[t1], v[t2]
            lo_u = max(int(np.floor(min(u0, u1, u2))), 0)
            hi_u = min(int(np.ceil(max(u0, u1, u2))), w - 1)
            lo_v = max(int(np.floor(min(v0, v1, v2))), 0)
            hi_v = min(int(np.ceil(max(v0, v1, v2))), h - 1)
            if lo_u > hi_u or lo_v > hi_v:
                continue
            denom = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
            if abs(denom) < 1e-12:
                continue
            gu, gv = np.meshgrid(
                np.arange(lo_u, hi_u + 1, dtype=float),
                np.arange(lo_v, hi_v + 1, dtype=float),
            )
            w1 = ((gu - u0) * (v2 - v0) - (gv - v0) * (u2 - u0)) / denom
            w2 = ((gv - v0) * (u1 - u0) - (gu - u0) * (v1 - v0)) / denom
            w0 = 1.0 - w1 - w2
            tol = -1e-9
            inside = (w0 >= tol) & (w1 >= tol) & (w2 >= tol)
            if not inside.any():
                continue
            zi = 1.0 / (w0 * inv_z[t0] + w1 * inv_z[t1] + w2 * inv_z[t2])
            patch = zbuf[lo_v : hi_v + 1, lo_u : hi_u + 1]
            np.minimum(patch, np.where(inside, zi, np.inf), out=patch)
    depth = np.where(np.isfinite(zbuf), zbuf, 0.0)
    return DepthMap(depth)
