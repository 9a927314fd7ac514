"""Keyframe selection, scene fragments, multi-view feature pooling, GRU fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraView, Pose, project_points, rotation_angle_deg
from .voxel import GridGeometry, VoxelGrid

_EPS = 1e-9

ROTATION_THRESHOLD_DEG = 15.0
TRANSLATION_THRESHOLD_M = 0.3


@dataclass
class Fragment:
    """n consecutive keyframe views sharing one voxel grid region."""

    views: list[CameraView]
    grid_region: GridGeometry
    index: int = 0

    def __post_init__(self):
        if len(self.views) < 2:
            raise ValueError("a fragment needs at least 2 views")


@dataclass
class FeatureVolume:
    """Per-voxel feature vectors with observation counts."""

    geometry: GridGeometry
    values: np.ndarray  # (N, C)
    count: np.ndarray  # (N,)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.count = np.asarray(self.count, dtype=int)
        n = self.geometry.num_voxels
        if self.values.shape[0] != n or self.count.shape != (n,):
            raise ValueError("feature volume shapes do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")
        if (self.count < 0).any():
            raise ValueError("counts must be >= 0")

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class GruWeights:
    """Per-voxel linear gate maps from concatenated (hidden, input) features.

    Stands in for the sparse spatial convolution of the reference design; at
    1x1x1 support the gate equations are preserved exactly.
    """

    w_z: np.ndarray  # (C, 2C)
    b_z: np.ndarray  # (C,)
    w_r: np.ndarray
    b_r: np.ndarray
    w_h: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        c = self.w_z.shape[0]
        for name in ("w_z", "w_r", "w_h"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (c, 2 * c):
                raise ValueError(f"{name} must have shape (C, 2C)")
            setattr(self, name, m)
        for name in ("b_z", "b_r", "b_h"):
            b = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if b.shape != (c,):
                raise ValueError(f"{name} must have shape (C,)")
            setattr(self, name, b)

    @property
    def channels(self) -> int:
        return self.w_z.shape[0]

    @staticmethod
    def random(channels: int, scale: float = 0.1, seed: int = 0) -> "GruWeights":
        rng = np.random.default_rng(seed)
        mk = lambda: scale * rng.standard_normal((channels, 2 * channels))
        bk = lambda: scale * rng.standard_normal(channels)
        return GruWeights(mk(), bk(), mk(), bk(), mk(), bk())


def select_keyframes(
    trajectory: list[Pose],
    *,
    rotation_deg: float = ROTATION_THRESHOLD_DEG,
    translation_m: float = TRANSLATION_THRESHOLD_M,
) -> list[int]:
    """Greedy keyframe scan: keep a frame when it moved enough from the last kept.

    A frame qualifies when its rotation to the last keyframe exceeds
    `rotation_deg` or its camera center moved more than `translation_m`.
    Frame 0 is always kept.
    """
    if not trajectory:
        raise ValueError("empty trajectory")
    kept = [0]
    last = trajectory[0]
    last_center = last.camera_center()
    for i, pose in enumerate(trajectory[1:], start=1):
        ang = rotation_angle_deg(last, pose)
        dist = float(np.linalg.norm(pose.camera_center() - last_center))
        if ang > rotation_deg or dist > translation_m:
            kept.append(i)
            last = pose
            last_center = pose.camera_center()
    return kept


def fragment_grid(
    views: list[CameraView],
    *,
    dims=(96, 96, 96),
    voxel_size: float = 0.04,
    truncation: float = 0.3,
    center_depth: float = 2.0,
    origin=None,
) -> GridGeometry:
    """Place a fragment's voxel box, snapped to the global lattice.

    The box centers on the mean of per-view target points `center_depth`
    meters along each optical axis; an explicit `origin` overrides placement.
    """
    dims = tuple(int(d) for d in dims)
    if origin is None:
        targets = np.stack(
            [v.pose.camera_center() + center_depth * v.pose.optical_axis() for v in views]
        )
        center = targets.mean(axis=0)
        origin = center - voxel_size * (np.array(dims) - 1) / 2.0
    origin = np.round(np.asarray(origin, dtype=float) / voxel_size) * voxel_size
    return GridGeometry(origin, voxel_size, dims, truncation)


def make_fragments(
    keyframes: list[CameraView],
    n: int,
    *,
    dims=(96, 96, 96),
    voxel_size: float = 0.04,
    truncation: float = 0.3,
    center_depth: float = 2.0,
) -> list[Fragment]:
    """Chunk consecutive keyframes into fragments of n views.

    The last chunk is kept when it still has >= 2 views and dropped otherwise.
    """
    if n < 2:
        raise ValueError("views per fragment must be >= 2")
    if len(keyframes) < 2:
        raise ValueError("need at least 2 keyframes")
    fragments = []
    for start in range(0, len(keyframes), n):
        chunk = keyframes[start : start + n]
        if len(chunk) < 2:
            break
        geo = fragment_grid(
            chunk,
            dims=dims,
            voxel_size=voxel_size,
            truncation=truncation,
            center_depth=center_depth,
        )
        fragments.append(Fragment(chunk, geo, index=len(fragments)))
    return fragments


def fuse_views(
    per_view_features: list[np.ndarray],
    geometry: GridGeometry,
    views: list[CameraView],
) -> FeatureVolume:
    """Visibility-weighted mean of 2D features sampled at voxel projections."""
    if len(per_view_features) != len(views):
        raise ValueError("one feature map per view required")
    if not views:
        raise ValueError("no views")
    from .geometry import bilinear_sample_many

    centers = geometry.centers()
    n = centers.shape[0]
    channels = np.asarray(per_view_features[0]).shape[2]
    acc = np.zeros((n, channels))
    cnt = np.zeros(n, dtype=int)
    for feat, view in zip(per_view_features, views):
        feat = np.asarray(feat, dtype=float)
        cam = view.pose.apply(centers)
        u, v, ok = project_points(view.intrinsics, cam)
        if ok.any():
            vals, _, _ = bilinear_sample_many(feat, u[ok], v[ok])
            acc[ok] += vals
            cnt[ok] += 1
    values = acc / np.maximum(cnt, 1)[:, None]
    values[cnt == 0] = 0.0
    return FeatureVolume(geometry, values, cnt)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_gates(prev_hidden: FeatureVolume, current: FeatureVolume, w: GruWeights):
    """Update and reset gates (z, r), each in (0, 1) elementwise."""
    hg = np.concatenate([prev_hidden.values, current.values], axis=1)
    z = _sigmoid(hg @ w.w_z.T + w.b_z)
    r = _sigmoid(hg @ w.w_r.T + w.b_r)
    return z, r


def gru_fuse(prev_hidden: FeatureVolume, current: FeatureVolume, w: GruWeights) -> FeatureVolume:
    """Gated recurrent blend of the previous hidden state with current features.

    z = sigmoid(W_z [h, g]); r = sigmoid(W_r [h, g]);
    h~ = tanh(W_h [r*h, g]); h' = (1 - z) h + z h~.
    Voxels unobserved in both inputs stay zero.
    """
    if prev_hidden.geometry.dims != current.geometry.dims:
        raise ValueError("feature volumes live on different grids")
    if prev_hidden.channels != current.channels or prev_hidden.channels != w.channels:
        raise ValueError("channel mismatch")
    h = prev_hidden.values
    g = current.values
    z, r = gru_gates(prev_hidden, current, w)
    rh_g = np.concatenate([r * h, g], axis=1)
    h_tilde = np.tanh(rh_g @ w.w_h.T + w.b_h)
    out = (1.0 - z) * h + z * h_tilde
    observed = (prev_hidden.count + current.count) > 0
    out[~observed] = 0.0
    return FeatureVolume(current.geometry, out, prev_hidden.count + current.count)


def integrate_fragment(global_grid: VoxelGrid, fragment_grid: VoxelGrid, mode: str = "replace") -> VoxelGrid:
    """Merge a fragment grid into the global grid on the shared lattice.

    `replace`: valid fragment voxels overwrite. `average`: running weighted
    mean using both grids' observation weights. The output covers the union
    of both extents.
    """
    if mode not in ("replace", "average"):
        raise ValueError("mode must be 'replace' or 'average'")
    ga, gb = global_grid.geometry, fragment_grid.geometry
    if not ga.same_lattice(gb):
        raise ValueError("grids are not on the same lattice")
    vs = ga.voxel_size
    lo = np.minimum(ga.origin, gb.origin)
    hi = np.maximum(
        ga.origin + vs * (np.array(ga.dims) - 1),
        gb.origin + vs * (np.array(gb.dims) - 1),
    )
    dims = tuple((np.round((hi - lo) / vs).astype(int) + 1).tolist())
    geo = GridGeometry(lo, vs, dims, ga.truncation)
    sdf = np.full(dims, geo.truncation)
    valid = np.zeros(dims, dtype=bool)
    weight = np.zeros(dims)

    def block(grid: VoxelGrid):
        off = np.round((grid.geometry.origin - lo) / vs).astype(int)
        nx, ny, nz = grid.geometry.dims
        return (
            slice(off[0], off[0] + nx),
            slice(off[1], off[1] + ny),
            slice(off[2], off[2] + nz),
        )

    sa = block(global_grid)
    sdf[sa] = global_grid.sdf
    valid[sa] = global_grid.valid
    weight[sa] = np.where(global_grid.valid, global_grid.weight, 0.0)

    sb = block(fragment_grid)
    fv = fragment_grid.valid
    if mode == "replace":
        sub_sdf = sdf[sb]
        sub_val = valid[sb]
        sub_w = weight[sb]
        sub_sdf[fv] = fragment_grid.sdf[fv]
        sub_val[fv] = True
        sub_w[fv] = np.where(fragment_grid.weight[fv] > 0, fragment_grid.weight[fv], 1.0)
        sdf[sb], valid[sb], weight[sb] = sub_sdf, sub_val, sub_w
    else:
        fw = np.where(fv, np.maximum(fragment_grid.weight, _EPS), 0.0)
        sub_sdf = sdf[sb]
        sub_w = weight[sb]
        tot = sub_w + fw
        merged = np.where(
            tot > 0,
            (sub_sdf * sub_w + fragment_grid.sdf * fw) / np.maximum(tot, _EPS),
            sub_sdf,
        )
        sdf[sb] = merged
        weight[sb] = tot
        valid[sb] |= fv
    return VoxelGrid(geo, sdf, valid, weight)
