"""Self-supervised losses over voxel-SDF grids and their analytic gradients.

Three geometric losses (multi-view SDF photometric, superpixel co-planar,
depth consistency) plus the auxiliary image losses (L1 RGB, edge-aware
smoothness, SSIM) and the weighted total. Every gradient here is exact up to
the piecewise-smooth structure of the losses (L1 kinks, bilinear lattice
crossings, median/argmin ties), which is what central finite differences see
almost everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import (
    CameraView,
    bilinear_sample_many,
    project_points,
    projection_jacobian,
    ray_directions,
    relative_pose,
)
from .voxel import DepthMap, PseudoDepth, VoxelGrid

_EPS = 1e-9


@dataclass
class LossWeights:
    """Weights of the total loss; defaults follow the reference configuration."""

    sdf: float = 1.0
    plane: float = 0.05
    depth: float = 1.0
    nerf: float = 1.0

    def __post_init__(self):
        if min(self.sdf, self.plane, self.depth, self.nerf) < 0:
            raise ValueError("loss weights must be >= 0")

    def as_tuple(self):
        return (self.sdf, self.plane, self.depth, self.nerf)


@dataclass
class LossValue:
    """Scalar loss with its sparse gradient over voxel SDF values.

    `grad_sdf` is a flat array over the grid's voxels (zeros mark voxels the
    loss does not touch); None for losses with no SDF dependence.
    """

    value: float
    grad_sdf: np.ndarray | None
    pair_count: int

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("loss value is not finite")
        if self.grad_sdf is not None and not np.all(np.isfinite(self.grad_sdf)):
            raise ValueError("loss gradient has non-finite entries")

    @staticmethod
    def zero(num_voxels: int | None = None) -> "LossValue":
        grad = None if num_voxels is None else np.zeros(num_voxels)
        return LossValue(0.0, grad, 0)

    def grad_entries(self) -> dict:
        if self.grad_sdf is None:
            return {}
        nz = np.nonzero(self.grad_sdf)[0]
        return {int(i): float(self.grad_sdf[i]) for i in nz}


@dataclass
class PlaneParam:
    """Plane in A^T x = 1 form, with the RMS residual of the fit."""

    A: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float).reshape(3)
        if np.linalg.norm(self.A) < _EPS:
            raise ValueError("degenerate plane parameter")


def _views_of(fragment) -> list[CameraView]:
    return list(fragment.views) if hasattr(fragment, "views") else list(fragment)


def surface_point(v_cam: np.ndarray, sdf: float) -> np.ndarray:
    """Camera-frame surface point: voxel center pushed by its signed SDF.

    The offset runs along the camera-outward unit ray, so negative SDF moves
    the point toward the camera and the implied depth is voxel depth + SDF.
    """
    v = np.asarray(v_cam, dtype=float).reshape(3)
    n = np.linalg.norm(v)
    if n < _EPS:
        raise ValueError("degenerate point: norm below 1e-9")
    return v + sdf * (v / n)


def surface_points(v_cam: np.ndarray, sdf: np.ndarray):
    """Vectorized surface points; returns (points, rays, ok)."""
    dirs, ok = ray_directions(v_cam)
    pts = np.asarray(v_cam, dtype=float) + np.asarray(sdf, dtype=float)[:, None] * dirs
    return pts, dirs, ok


def _huber_value_grad(diff: np.ndarray, delta: float | None):
    """Per-element penalty and derivative: pure L1, or Huber matching L1 tails."""
    if delta is None:
        return np.abs(diff), np.sign(diff)
    a = np.abs(diff)
    val = np.where(a <= delta, diff * diff / (2.0 * delta), a - delta / 2.0)
    grad = np.clip(diff / delta, -1.0, 1.0)
    return val, grad


def sdf_photometric_loss(
    grid: VoxelGrid,
    fragment,
    *,
    huber_delta: float | None = None,
    voxel_mask: np.ndarray | None = None,
    with_grad: bool = True,
) -> LossValue:
    """Multi-view photometric consistency of SDF-implied surface points.

    For every valid voxel and ordered view pair (cam, cam'): the voxel center
    projects to P in cam; its surface point, mapped through the relative pose,
    projects to P' in cam'. In-bounds pairs contribute the absolute intensity
    difference summed over channels, and the total is the candidate-weighted
    mean (sum of all terms over the total candidate count). The reference
    intensity at P does not depend on the SDF, so the gradient flows through
    the cam' sample only.
    """
    views = _views_of(fragment)
    if len(views) < 2:
        raise ValueError("photometric loss needs at least 2 views")
    nvox = grid.geometry.num_voxels
    active = grid.valid.ravel().copy()
    if voxel_mask is not None:
        active &= np.asarray(voxel_mask, dtype=bool).ravel()
    idx = np.nonzero(active)[0]
    if idx.size == 0:
        return LossValue.zero(nvox)
    centers = grid.geometry.centers()[idx]
    sdf = grid.sdf.ravel()[idx]

    per_view = []
    for view in views:
        cam = view.pose.apply(centers)
        u, v, ok = project_points(view.intrinsics, cam)
        dirs, rok = ray_directions(cam)
        src_ok = ok & rok & (cam[:, 2] > _EPS)
        intensity = np.zeros((idx.size, 3))
        if src_ok.any():
            vals, _, _ = bilinear_sample_many(view.image, u[src_ok], v[src_ok])
            intensity[src_ok] = vals
        surf = cam + sdf[:, None] * dirs
        per_view.append((cam, dirs, src_ok, intensity, surf))

    total = 0.0
    count = 0
    grad = np.zeros(nvox) if with_grad else None
    for a, view_a in enumerate(views):
        cam_a, dirs_a, ok_a, int_a, surf_a = per_view[a]
        if not ok_a.any():
            continue
        for b, view_b in enumerate(views):
            if a == b:
                continue
            rel = relative_pose(view_a.pose, view_b.pose)
            surf_b = surf_a @ rel.rotation.T + rel.translation
            u2, v2, ok2 = project_points(view_b.intrinsics, surf_b)
            cand = ok_a & ok2
            if not cand.any():
                continue
            vals, dIdu, dIdv = bilinear_sample_many(view_b.image, u2[cand], v2[cand])
            diff = int_a[cand] - vals
            pen, dpen = _huber_value_grad(diff, huber_delta)
            total += float(pen.sum())
            count += int(cand.sum())
            if with_grad:
                jac = projection_jacobian(view_b.intrinsics, surf_b[cand])
                dray_b = dirs_a[cand] @ rel.rotation.T
                duv = np.einsum("kij,kj->ki", jac, dray_b)
                dI = dIdu * duv[:, 0:1] + dIdv * duv[:, 1:2]
                contrib = -(dpen * dI).sum(axis=1)
                np.add.at(grad, idx[cand], contrib)

    if count == 0:
        return LossValue.zero(nvox)
    if with_grad:
        grad /= count
    return LossValue(total / count, grad, count)


def fit_plane(points: np.ndarray, eps: float = 1e-6) -> PlaneParam:
    """Least-squares plane A^T x = 1 through a point set.

    Solves the 3x3 regularized normal equations (S^T S + eps I) A = S^T 1.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise ValueError("fit_plane needs at least 3 points")
    m = pts.T @ pts + eps * np.eye(3)
    b = pts.sum(axis=0)
    try:
        a = np.linalg.solve(m, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular plane-fit system") from exc
    residual = float(np.sqrt(np.mean((pts @ a - 1.0) ** 2)))
    return PlaneParam(a, residual)


def _safe_dot(g: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Clamp |A.s| away from zero, keeping the sign, so pseudo points stay finite."""
    s = np.where(g >= 0, 1.0, -1.0)
    return s * np.maximum(np.abs(g), floor)


def coplanar_loss(
    grid: VoxelGrid,
    fragment,
    segmentations,
    *,
    min_points: int = 100,
    eps: float = 1e-6,
    freeze_plane: bool = False,
    voxel_mask: np.ndarray | None = None,
    with_grad: bool = True,
) -> LossValue:
    """Pull surface points of each superpixel onto its least-squares plane.

    Surface points (camera frame) whose voxel-center projection lands in a
    segment with at least `min_points` members are rescaled radially onto the
    fitted plane (s' = s / (A.s)); the loss is the mean L1 distance |s - s'|
    over all contributing points. Unless `freeze_plane`, the gradient
    differentiates through the plane fit as well.
    """
    views = _views_of(fragment)
    if len(views) != len(segmentations):
        raise ValueError("one segmentation per view required")
    nvox = grid.geometry.num_voxels
    active = grid.valid.ravel().copy()
    if voxel_mask is not None:
        active &= np.asarray(voxel_mask, dtype=bool).ravel()
    idx = np.nonzero(active)[0]
    if idx.size == 0:
        return LossValue.zero(nvox)
    centers = grid.geometry.centers()[idx]
    sdf = grid.sdf.ravel()[idx]

    total = 0.0
    npts = 0
    grad = np.zeros(nvox) if with_grad else None
    for view, seg in zip(views, segmentations):
        if seg.height != view.intrinsics.height or seg.width != view.intrinsics.width:
            raise ValueError("segmentation size does not match the view")
        cam = view.pose.apply(centers)
        u, v, ok = project_points(view.intrinsics, cam)
        dirs, rok = ray_directions(cam)
        cand = ok & rok & (cam[:, 2] > _EPS)
        if not cand.any():
            continue
        ui = np.clip(np.rint(u[cand]).astype(int), 0, seg.width - 1)
        vi = np.clip(np.rint(v[cand]).astype(int), 0, seg.height - 1)
        labels = seg.label[vi, ui]
        surf = cam[cand] + sdf[cand, None] * dirs[cand]
        rays = dirs[cand]
        vox = idx[cand]
        for lab in np.unique(labels):
            sel = labels == lab
            n = int(sel.sum())
            if n < min_points:
                continue
            s = surf[sel]
            m = s.T @ s + eps * np.eye(3)
            try:
                a_vec = np.linalg.solve(m, s.sum(axis=0))
            except np.linalg.LinAlgError:
                continue
            g = _safe_dot(s @ a_vec)
            s_prime = s / g[:, None]
            e = s - s_prime
            total += float(np.abs(e).sum())
            npts += n
            if with_grad:
                sgn = np.sign(e)
                dot_ss = (sgn * s).sum(axis=1)
                dL_ds = sgn * (1.0 - 1.0 / g)[:, None] + (dot_ss / g**2)[:, None] * a_vec
                if not freeze_plane:
                    w_vec = s.T @ (dot_ss / g**2)
                    q = np.linalg.solve(m, w_vec)
                    dL_ds += (1.0 - g)[:, None] * q - (s @ q)[:, None] * a_vec
                np.add.at(grad, vox[sel], (dL_ds * rays[sel]).sum(axis=1))

    if npts == 0:
        return LossValue.zero(nvox)
    if with_grad:
        grad /= npts
    return LossValue(total / npts, grad, npts)


def recover_scale(reference: DepthMap, target: DepthMap) -> float:
    """Median ratio reference/target over jointly-valid pixels."""
    joint = reference.valid & target.valid
    if not joint.any():
        raise ValueError("no jointly-valid pixels for scale recovery")
    return float(np.median(reference.depth[joint] / target.depth[joint]))


@dataclass
class DepthConsistency(LossValue):
    """Depth-consistency loss with gradients w.r.t. both depth maps.

    The recovered scale is a median of per-pixel ratios; its dependence on the
    central pixel(s) is included in the gradients so finite differences match.
    """

    scale: float = 1.0
    grad_reference: np.ndarray | None = None
    grad_target: np.ndarray | None = None

    def chain_to_sdf(self, source: PseudoDepth, num_voxels: int) -> LossValue:
        """Route the reference-depth gradient to SDF values via splat provenance."""
        grad = np.zeros(num_voxels)
        mask = (source.source >= 0) & (self.grad_reference != 0)
        np.add.at(
            grad,
            source.source[mask],
            self.grad_reference[mask] * source.dz_dsdf[mask],
        )
        return LossValue(self.value, grad, self.pair_count)


def depth_consistency_loss(sdf_depth: DepthMap, nerf_depth: DepthMap) -> DepthConsistency:
    """Mean L1 between real-scale depth and scale-recovered rendered depth.

    The rendered depth is multiplied by the median of per-pixel ratios before
    comparison, so any global scale on it is absorbed exactly.
    """
    if sdf_depth.depth.shape != nerf_depth.depth.shape:
        raise ValueError("depth map dimensions do not match")
    joint = sdf_depth.valid & nerf_depth.valid
    n = int(np.count_nonzero(joint))
    if n == 0:
        raise ValueError("no jointly-valid pixels")
    ref = sdf_depth.depth[joint]
    tgt = nerf_depth.depth[joint]
    ratios = ref / tgt
    order = np.argsort(ratios, kind="stable")
    if n % 2 == 1:
        central = [order[n // 2]]
        weights = [1.0]
    else:
        central = [order[n // 2 - 1], order[n // 2]]
        weights = [0.5, 0.5]
    c = float(np.median(ratios))

    resid = ref - c * tgt
    sgn = np.sign(resid)
    value = float(np.abs(resid).mean())
    g_scale = float((sgn * tgt).sum()) / n  # dL/dc = -g_scale

    gr = sgn / n
    gt = -c * sgn / n
    for p, w in zip(central, weights):
        gr[p] -= w * g_scale / tgt[p]
        gt[p] += w * g_scale * ref[p] / tgt[p] ** 2

    grad_ref = np.zeros(sdf_depth.depth.shape)
    grad_tgt = np.zeros(nerf_depth.depth.shape)
    grad_ref[joint] = gr
    grad_tgt[joint] = gt
    return DepthConsistency(
        value, None, n, scale=c, grad_reference=grad_ref, grad_target=grad_tgt
    )


# --------------------------------------------------------------------------
# image losses

_SSIM_WIN = 7
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def _box_valid(x: np.ndarray) -> np.ndarray:
    """Mean over fully-interior 7x7 windows (exact, no boundary bias)."""
    pad = _SSIM_WIN // 2
    m = ndimage.uniform_filter(x, size=_SSIM_WIN, mode="constant")
    return m[pad:-pad, pad:-pad]


def _box_adjoint(f: np.ndarray, shape) -> np.ndarray:
    pad = _SSIM_WIN // 2
    emb = np.zeros(shape)
    emb[pad:-pad, pad:-pad] = f
    return ndimage.uniform_filter(emb, size=_SSIM_WIN, mode="constant")


def _ssim_channel(a, b, with_grad):
    mx, my = _box_valid(a), _box_valid(b)
    mxx, myy, mxy = _box_valid(a * a), _box_valid(b * b), _box_valid(a * b)
    vx = mxx - mx * mx
    vy = myy - my * my
    cxy = mxy - mx * my
    a1 = 2 * mx * my + _SSIM_C1
    a2 = 2 * cxy + _SSIM_C2
    b1 = mx * mx + my * my + _SSIM_C1
    b2 = vx + vy + _SSIM_C2
    smap = (a1 * a2) / (b1 * b2)
    if not with_grad:
        return float(smap.mean()), None, None
    f = np.full(smap.shape, 1.0 / smap.size)
    d_a1 = f * a2 / (b1 * b2)
    d_a2 = f * a1 / (b1 * b2)
    d_b1 = -f * smap / b1
    d_b2 = -f * smap / b2
    d_cxy = 2 * d_a2
    d_vx = d_b2
    d_vy = d_b2
    d_mx = 2 * my * d_a1 + 2 * mx * d_b1 - 2 * mx * d_vx - my * d_cxy
    d_my = 2 * mx * d_a1 + 2 * my * d_b1 - 2 * my * d_vy - mx * d_cxy
    d_mxx = d_vx
    d_myy = d_vy
    d_mxy = d_cxy
    da = _box_adjoint(d_mx, a.shape) + 2 * a * _box_adjoint(d_mxx, a.shape) + b * _box_adjoint(d_mxy, a.shape)
    db = _box_adjoint(d_my, a.shape) + 2 * b * _box_adjoint(d_myy, a.shape) + a * _box_adjoint(d_mxy, a.shape)
    return float(smap.mean()), da, db


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with a 7x7 uniform window, averaged over channels."""
    s, _, _ = ssim_with_grad(a, b, with_grad=False)
    return s


def ssim_with_grad(a: np.ndarray, b: np.ndarray, with_grad: bool = True):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("ssim inputs must have the same shape")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    h, w, c = a.shape
    if h < _SSIM_WIN or w < _SSIM_WIN:
        raise ValueError("images smaller than the SSIM window")
    vals = []
    da = np.zeros_like(a) if with_grad else None
    db = np.zeros_like(b) if with_grad else None
    for ch in range(c):
        s, ga, gb = _ssim_channel(a[:, :, ch], b[:, :, ch], with_grad)
        vals.append(s)
        if with_grad:
            da[:, :, ch] = ga / c
            db[:, :, ch] = gb / c
    return float(np.mean(vals)), da, db


def smooth_loss(depth, image) -> float:
    """Edge-aware first-order smoothness of mean-normalized depth."""
    val, _ = smooth_loss_with_grad(depth, image, with_grad=False)
    return val


def smooth_loss_with_grad(depth, image, with_grad: bool = True):
    d = depth.depth if isinstance(depth, DepthMap) else np.asarray(depth, dtype=float)
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = img[:, :, None]
    if d.shape != img.shape[:2]:
        raise ValueError("depth and image dimensions do not match")
    mu = d.mean()
    if mu <= _EPS:
        return 0.0, (np.zeros_like(d) if with_grad else None)
    dn = d / mu
    du = dn[:, 1:] - dn[:, :-1]
    dv = dn[1:, :] - dn[:-1, :]
    eu = np.exp(-np.abs(img[:, 1:] - img[:, :-1]).mean(axis=2))
    ev = np.exp(-np.abs(img[1:, :] - img[:-1, :]).mean(axis=2))
    value = float((np.abs(du) * eu).mean() + (np.abs(dv) * ev).mean())
    if not with_grad:
        return value, None
    g = np.zeros_like(d)
    su = np.sign(du) * eu / du.size
    g[:, 1:] += su
    g[:, :-1] -= su
    sv = np.sign(dv) * ev / dv.size
    g[1:, :] += sv
    g[:-1, :] -= sv
    grad = g / mu - (g * d).sum() / (mu * mu * d.size)
    return value, grad


def nerf_loss(rendered_views, input_images) -> LossValue:
    """Sum over views of L1 RGB + smoothness + (1 - SSIM) against the inputs."""
    value, _ = nerf_loss_with_grads(rendered_views, input_images, with_grad=False)
    return value


def nerf_loss_with_grads(rendered_views, input_images, with_grad: bool = True):
    rendered = list(rendered_views)
    inputs = list(input_images)
    if len(rendered) == 0:
        raise ValueError("nerf loss needs at least one view")
    if len(rendered) != len(inputs):
        raise ValueError("one rendered view per input image required")
    total = 0.0
    grads = []
    for rv, img in zip(rendered, inputs):
        ri = np.asarray(rv.image, dtype=float)
        ii = np.asarray(img, dtype=float)
        if ri.shape != ii.shape:
            raise ValueError("rendered/input image shapes differ")
        diff = ri - ii
        rgb = float(np.abs(diff).mean())
        sm, d_depth = smooth_loss_with_grad(rv.depth, ii, with_grad)
        ss, d_img_ssim, _ = ssim_with_grad(ri, ii, with_grad)
        total += rgb + sm + (1.0 - ss)
        if with_grad:
            d_img = np.sign(diff) / diff.size - d_img_ssim
            grads.append((d_img, d_depth))
    loss = LossValue(total, None, len(rendered))
    return loss, (grads if with_grad else None)


def total_loss(
    sdf: LossValue,
    plane: LossValue,
    depth: LossValue,
    nerf: LossValue,
    weights: LossWeights,
) -> LossValue:
    """Weighted sum; gradients are scaled and merged, zero-weight parts dropped."""
    parts = [
        (weights.sdf, sdf),
        (weights.plane, plane),
        (weights.depth, depth),
        (weights.nerf, nerf),
    ]
    value = 0.0
    count = 0
    grad = None
    for w, part in parts:
        if part is None or w == 0.0:
            continue
        value += w * part.value
        count += part.pair_count
        if part.grad_sdf is not None:
            if grad is None:
                grad = w * part.grad_sdf.astype(float)
            else:
                grad = grad + w * part.grad_sdf
    return LossValue(value, grad, count)
