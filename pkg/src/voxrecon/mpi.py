"""Multiplane images: over-compositing, volumetric rendering, plane warping.

Planes are fronto-parallel in the source camera and stored nearest-first:
disparities strictly decrease with the plane index, depths z_i = 1/d_i
increase. Shading points along a ray are therefore already ordered near to
far, and transmittance accumulates over the planes in front.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Intrinsics, Pixel, Pose, bilinear_sample_many, relative_pose

_EPS = 1e-9


@dataclass
class MpiStack:
    """Per-source-view plane stack with per-pixel color and density."""

    intrinsics: Intrinsics
    pose: Pose
    disparities: np.ndarray  # (N,), strictly decreasing, 1/m
    color: np.ndarray  # (N, H, W, 3) in [0, 1]
    density: np.ndarray  # (N, H, W) >= 0

    def __post_init__(self):
        self.disparities = np.asarray(self.disparities, dtype=float).reshape(-1)
        self.color = np.asarray(self.color, dtype=float)
        self.density = np.asarray(self.density, dtype=float)
        n = self.disparities.size
        if n < 1:
            raise ValueError("at least one plane required")
        if n > 1 and not np.all(np.diff(self.disparities) < 0):
            raise ValueError("disparities must be strictly decreasing (near to far)")
        if (self.disparities <= 0).any():
            raise ValueError("disparities must be positive")
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.color.shape != (n, h, w, 3):
            raise ValueError("color must have shape (N, H, W, 3)")
        if self.density.shape != (n, h, w):
            raise ValueError("density must have shape (N, H, W)")
        if (self.density < 0).any():
            raise ValueError("density must be >= 0")
        if self.color.min() < 0 or self.color.max() > 1:
            raise ValueError("colors must lie in [0, 1]")

    @property
    def num_planes(self) -> int:
        return self.disparities.size

    @property
    def depths(self) -> np.ndarray:
        return 1.0 / self.disparities


@dataclass
class RenderedView:
    image: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    transmittance: np.ndarray  # (H, W)


DEFAULT_NUM_PLANES = 32
DEFAULT_MIN_DEPTH = 0.3
DEFAULT_MAX_DEPTH = 10.0


def uniform_disparities(
    n: int = DEFAULT_NUM_PLANES,
    min_depth: float = DEFAULT_MIN_DEPTH,
    max_depth: float = DEFAULT_MAX_DEPTH,
) -> np.ndarray:
    """Disparities uniformly spaced from 1/min_depth (near) down to 1/max_depth."""
    if n < 1 or min_depth <= 0 or max_depth <= min_depth:
        raise ValueError("need n >= 1 and 0 < min_depth < max_depth")
    return np.linspace(1.0 / min_depth, 1.0 / max_depth, n)


def _pixel_ray_norms(intr: Intrinsics):
    """Per-pixel (H, W) norm of the z=1 ray direction through each pixel."""
    us, vs = np.meshgrid(np.arange(intr.width, dtype=float), np.arange(intr.height, dtype=float))
    x = (us - intr.cx) / intr.fx
    y = (vs - intr.cy) / intr.fy
    return np.sqrt(x * x + y * y + 1.0), x, y


def compose_over(mpi: MpiStack) -> RenderedView:
    """Alpha 'over' compositing; density is interpreted as alpha in [0, 1]."""
    if mpi.density.max() > 1.0:
        raise ValueError("over-compositing requires density in [0, 1]")
    alpha = mpi.density
    trans_in = np.cumprod(1.0 - alpha, axis=0)
    t_before = np.concatenate([np.ones_like(alpha[:1]), trans_in[:-1]], axis=0)
    w = alpha * t_before
    image = (w[..., None] * mpi.color).sum(axis=0)
    depth = (w * mpi.depths[:, None, None]).sum(axis=0)
    return RenderedView(image, depth, trans_in[-1])


def _shading_deltas(zeta: np.ndarray, ray_norm: np.ndarray) -> np.ndarray:
    """Distances between consecutive shading points; the last gap is repeated."""
    n = zeta.shape[0]
    if n == 1:
        return np.abs(zeta) * ray_norm[None]
    gaps = np.diff(zeta, axis=0) * ray_norm[None]
    return np.concatenate([gaps, gaps[-1:]], axis=0)


def _composite(sigma, color, z, delta):
    """Shared volumetric compositor; all inputs are (N, H, W[, 3])."""
    absorb = np.exp(-sigma * delta)
    t_after = np.cumprod(absorb, axis=0)
    t_before = np.concatenate([np.ones_like(absorb[:1]), t_after[:-1]], axis=0)
    w = t_before * (1.0 - absorb)
    image = (w[..., None] * color).sum(axis=0)
    depth = (w * z).sum(axis=0)
    return image, depth, t_after[-1], (absorb, t_before, w)


def render_volumetric(mpi: MpiStack) -> RenderedView:
    """NeRF-style rendering: weights T_i (1 - exp(-sigma_i delta_i)) near to far."""
    ray_norm, _, _ = _pixel_ray_norms(mpi.intrinsics)
    z = mpi.depths[:, None, None] * np.ones_like(mpi.density)
    delta = _shading_deltas(z, ray_norm)
    image, depth, trans, _ = _composite(mpi.density, mpi.color, z, delta)
    return RenderedView(image, depth, trans)


def render_volumetric_vjp(
    mpi: MpiStack,
    grad_image: np.ndarray | None = None,
    grad_depth: np.ndarray | None = None,
    grad_transmittance: np.ndarray | None = None,
):
    """Gradients of the volumetric render w.r.t. density and color.

    Returns (d_density (N,H,W), d_color (N,H,W,3)) for the given output
    cotangents.
    """
    ray_norm, _, _ = _pixel_ray_norms(mpi.intrinsics)
    z = mpi.depths[:, None, None] * np.ones_like(mpi.density)
    delta = _shading_deltas(z, ray_norm)
    _, _, t_final, (absorb, t_before, w) = _composite(mpi.density, mpi.color, z, delta)

    h, wd = mpi.intrinsics.height, mpi.intrinsics.width
    gi = np.zeros((h, wd, 3)) if grad_image is None else np.asarray(grad_image, dtype=float)
    gd = np.zeros((h, wd)) if grad_depth is None else np.asarray(grad_depth, dtype=float)
    gt = np.zeros((h, wd)) if grad_transmittance is None else np.asarray(grad_transmittance, dtype=float)

    d_color = w[..., None] * gi[None]
    u = (mpi.color * gi[None]).sum(axis=-1) + z * gd[None]
    uw = u * w
    suffix = np.flip(np.cumsum(np.flip(uw, axis=0), axis=0), axis=0) - uw
    d_sigma = delta * (u * t_before * absorb - suffix) - delta * t_final[None] * gt[None]
    return d_sigma, d_color


def plane_homography(
    source_intr: Intrinsics,
    target_intr: Intrinsics,
    rel_pose: Pose,
    disparity: float,
) -> np.ndarray:
    """3x3 homography mapping target pixels to source pixels for one plane.

    `rel_pose` maps target camera coordinates to source camera coordinates;
    the plane is z = 1/disparity in the source frame. This is the exact
    plane-induced homography (the plane re-expressed in the target frame),
    verified against direct ray-plane intersection.
    """
    if disparity <= 0:
        raise ValueError("disparity must be positive")
    z = 1.0 / disparity
    r = rel_pose.rotation
    t = rel_pose.translation
    denom = z - t[2]  # n.t with n = (0,0,1)
    if abs(denom) < 1e-12:
        raise ValueError("target camera center lies on the plane")
    inner = r + np.outer(t, r[2]) / denom
    return source_intr.matrix() @ inner @ np.linalg.inv(target_intr.matrix())


def warp_plane_pixel(
    source_intr: Intrinsics,
    target_intr: Intrinsics,
    rel_pose: Pose,
    disparity: float,
    pixel,
) -> Pixel:
    """Map a target pixel to the source view through one MPI plane."""
    h = plane_homography(source_intr, target_intr, rel_pose, disparity)
    u, v = (pixel.u, pixel.v) if isinstance(pixel, Pixel) else (pixel[0], pixel[1])
    q = h @ np.array([u, v, 1.0])
    if abs(q[2]) < 1e-12:
        raise ValueError("degenerate homography result")
    us, vs = q[0] / q[2], q[1] / q[2]
    inb = (0.0 <= us <= source_intr.width - 1) and (0.0 <= vs <= source_intr.height - 1)
    return Pixel(us, vs, inb)


def render_target(mpi: MpiStack, target_intr: Intrinsics, target_pose: Pose) -> RenderedView:
    """Render the source MPI from a target camera.

    Per target pixel and plane: warp to the source view through the plane
    homography and bilinear-sample color and density (out-of-bounds samples
    get density 0), then volumetric-render along the target ray with
    target-side shading distances. Fully disoccluded pixels end with
    transmittance 1.
    """
    rel = relative_pose(target_pose, mpi.pose)  # target cam -> source cam
    r, t = rel.rotation, rel.translation
    n_planes = mpi.num_planes
    h, w = target_intr.height, target_intr.width
    ray_norm, x, y = _pixel_ray_norms(target_intr)
    dirs_t = np.stack([x, y, np.ones_like(x)], axis=-1)
    dz_s = dirs_t @ r[2]  # z-component of the ray in the source frame
    safe_dz = np.where(np.abs(dz_s) > _EPS, dz_s, 1.0)

    zs = mpi.depths
    sigma = np.zeros((n_planes, h, w))
    color = np.zeros((n_planes, h, w, 3))
    zeta = np.zeros((n_planes, h, w))
    for i in range(n_planes):
        hom = None
        try:
            hom = plane_homography(mpi.intrinsics, target_intr, rel, mpi.disparities[i])
        except ValueError:
            pass
        zi = (zs[i] - t[2]) / safe_dz
        zeta[i] = np.where(np.abs(dz_s) > _EPS, zi, zs[i])
        if hom is None:
            continue
        us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        qz = hom[2, 0] * us + hom[2, 1] * vs + hom[2, 2]
        ok = np.abs(qz) > 1e-12
        qzs = np.where(ok, qz, 1.0)
        su = (hom[0, 0] * us + hom[0, 1] * vs + hom[0, 2]) / qzs
        sv = (hom[1, 0] * us + hom[1, 1] * vs + hom[1, 2]) / qzs
        inb = (
            ok
            & (su >= 0)
            & (su <= mpi.intrinsics.width - 1)
            & (sv >= 0)
            & (sv <= mpi.intrinsics.height - 1)
            & (np.abs(dz_s) > _EPS)
            & (zeta[i] > _EPS)
        )
        if inb.any():
            cu = su[inb]
            cv = sv[inb]
            cvals, _, _ = bilinear_sample_many(mpi.color[i], cu, cv)
            svals, _, _ = bilinear_sample_many(mpi.density[i], cu, cv)
            sig_i = sigma[i]
            col_i = color[i]
            sig_i[inb] = svals
            col_i[inb] = cvals

    flip = dz_s < 0
    if flip.any():
        fwd = np.arange(n_planes)[:, None, None]
        order = np.where(flip[None], n_planes - 1 - fwd, fwd)
        sigma = np.take_along_axis(sigma, order, axis=0)
        zeta = np.take_along_axis(zeta, order, axis=0)
        color = np.take_along_axis(color, order[..., None], axis=0)

    sigma = np.where(zeta > _EPS, sigma, 0.0)
    z_render = np.maximum(zeta, 0.0)
    delta = np.abs(_shading_deltas(zeta, ray_norm))
    image, depth, trans, _ = _composite(sigma, color, z_render, delta)
    return RenderedView(image, depth, trans)
