"""Direct gradient descent on voxel-SDF values under the self-supervised losses.

Desk-scale stand-in for network training: the grid itself is the parameter
vector. Evaluation is vectorized and single-threaded, so loss histories are
bitwise reproducible regardless of host parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericError
from .fusion import Fragment
from .losses import (
    LossValue,
    LossWeights,
    coplanar_loss,
    depth_consistency_loss,
    nerf_loss_with_grads,
    sdf_photometric_loss,
    total_loss,
)
from .mpi import MpiStack, render_volumetric, render_volumetric_vjp
from .superpixel import felzenszwalb_segment
from .voxel import DepthMap, GridGeometry, VoxelGrid, sdf_pseudo_depth


@dataclass
class OptimConfig:
    learning_rate: float = 1.0
    iterations: int = 100
    weights: LossWeights = field(default_factory=LossWeights)
    momentum: float = 0.0
    clamp: float | None = None  # defaults to the grid truncation
    use_photometric: bool = True
    use_coplanar: bool = True
    use_mpi: bool = False
    mpi_learning_rate: float = 0.0
    huber_delta: float | None = None
    min_points: int = 100
    plane_eps: float = 1e-6
    freeze_plane: bool = False
    seg_k: float = 300.0
    seg_min_size: int = 500
    seg_sigma: float = 0.8
    inter_fragment: bool = False
    boundary_frames: int = 4
    seed: int = 0
    log_interval: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class LossBreakdown:
    step: int
    sdf: float
    plane: float
    depth: float
    nerf: float
    total: float
    pair_count: int

    def as_row(self):
        return [self.step, self.sdf, self.plane, self.depth, self.nerf, self.total, self.pair_count]


def region_mask(global_geo: GridGeometry, region: GridGeometry) -> np.ndarray:
    """Flat mask of global-grid voxels inside a fragment region (shared lattice)."""
    if not global_geo.same_lattice(region):
        raise ValueError("fragment region is not on the grid lattice")
    off = np.round((region.origin - global_geo.origin) / global_geo.voxel_size).astype(int)
    mask = np.zeros(global_geo.dims, dtype=bool)
    lo = np.maximum(off, 0)
    hi = np.minimum(off + np.array(region.dims), np.array(global_geo.dims))
    if np.all(hi > lo):
        mask[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = True
    return mask.ravel()


def _merge_weighted(parts: list[LossValue], nvox: int) -> LossValue:
    """Combine per-fragment candidate-weighted means into one global mean."""
    total_count = sum(p.pair_count for p in parts)
    if total_count == 0:
        return LossValue.zero(nvox)
    value = sum(p.value * p.pair_count for p in parts) / total_count
    grad = np.zeros(nvox)
    for p in parts:
        if p.grad_sdf is not None and p.pair_count:
            grad += p.grad_sdf * p.pair_count
    grad /= total_count
    return LossValue(value, grad, total_count)


def _segment_views(fragments, cfg: OptimConfig):
    cache = {}
    for frag in fragments:
        for view in frag.views:
            key = id(view)
            if key not in cache:
                cache[key] = felzenszwalb_segment(
                    view.image, k=cfg.seg_k, min_size=cfg.seg_min_size, sigma=cfg.seg_sigma
                )
    return cache


def evaluate_losses(
    grid: VoxelGrid,
    fragments: list[Fragment],
    cfg: OptimConfig,
    *,
    segmentations=None,
    mpi_stacks: list[MpiStack] | None = None,
    with_grad: bool = True,
):
    """Total loss over all fragments plus per-component values and MPI grads."""
    nvox = grid.geometry.num_voxels
    masks = [region_mask(grid.geometry, f.grid_region) for f in fragments]

    sdf_parts: list[LossValue] = []
    plane_parts: list[LossValue] = []
    if cfg.use_photometric:
        for frag, mask in zip(fragments, masks):
            sdf_parts.append(
                sdf_photometric_loss(
                    grid, frag, huber_delta=cfg.huber_delta, voxel_mask=mask, with_grad=with_grad
                )
            )
        if cfg.inter_fragment:
            for prev, cur, mask in zip(fragments, fragments[1:], masks[1:]):
                k = cfg.boundary_frames
                boundary = prev.views[-k:] + cur.views[:k]
                if len(boundary) >= 2:
                    sdf_parts.append(
                        sdf_photometric_loss(
                            grid,
                            boundary,
                            huber_delta=cfg.huber_delta,
                            voxel_mask=mask,
                            with_grad=with_grad,
                        )
                    )
    if cfg.use_coplanar:
        segs = segmentations if segmentations is not None else _segment_views(fragments, cfg)
        for frag, mask in zip(fragments, masks):
            frag_segs = [segs[id(v)] for v in frag.views]
            plane_parts.append(
                coplanar_loss(
                    grid,
                    frag,
                    frag_segs,
                    min_points=cfg.min_points,
                    eps=cfg.plane_eps,
                    freeze_plane=cfg.freeze_plane,
                    voxel_mask=mask,
                    with_grad=with_grad,
                )
            )

    depth_parts: list[LossValue] = []
    nerf_value = 0.0
    nerf_count = 0
    mpi_grads = []
    if cfg.use_mpi and mpi_stacks:
        views = [v for f in fragments for v in f.views]
        for stack, view in zip(mpi_stacks, views):
            rendered = render_volumetric(stack)
            d_sigma = np.zeros_like(stack.density)
            d_color = np.zeros_like(stack.color)
            nerf_lv, grads = nerf_loss_with_grads([rendered], [view.image], with_grad)
            nerf_value += nerf_lv.value
            nerf_count += nerf_lv.pair_count
            if with_grad and grads:
                gi, gd = grads[0]
                ds, dc = render_volumetric_vjp(stack, gi, gd)
                d_sigma += ds
                d_color += dc
            pseudo = sdf_pseudo_depth(grid, view, with_source=True)
            rendered_depth = DepthMap(np.maximum(rendered.depth, 0.0))
            if (pseudo.depth.valid & rendered_depth.valid).any():
                dc_loss = depth_consistency_loss(pseudo.depth, rendered_depth)
                depth_parts.append(dc_loss.chain_to_sdf(pseudo, nvox))
                if with_grad:
                    ds, _ = render_volumetric_vjp(stack, None, dc_loss.grad_target)
                    d_sigma += ds
            mpi_grads.append((d_sigma, d_color))

    sdf_lv = _merge_weighted(sdf_parts, nvox) if sdf_parts else LossValue.zero(nvox)
    plane_lv = _merge_weighted(plane_parts, nvox) if plane_parts else LossValue.zero(nvox)
    depth_lv = _merge_weighted(depth_parts, nvox) if depth_parts else LossValue.zero(nvox)
    nerf_lv = LossValue(nerf_value, None, nerf_count)
    total = total_loss(sdf_lv, plane_lv, depth_lv, nerf_lv, cfg.weights)
    return total, (sdf_lv, plane_lv, depth_lv, nerf_lv), mpi_grads


def optimize_sdf(
    init: VoxelGrid,
    fragments: list[Fragment],
    mpi_stacks: list[MpiStack] | None = None,
    cfg: OptimConfig | None = None,
):
    """Gradient descent on SDF values; returns (grid, loss history).

    Voxels never observed (invalid in the initial grid) are frozen, and
    updates are clamped to the truncation band. With all loss weights zero
    the grid is returned unchanged.
    """
    cfg = cfg or OptimConfig()
    grid = init.copy()
    clamp = cfg.clamp if cfg.clamp is not None else grid.geometry.truncation
    frozen = ~init.valid.ravel()
    velocity = np.zeros(grid.geometry.num_voxels)
    segmentations = _segment_views(fragments, cfg) if cfg.use_coplanar else None
    history: list[LossBreakdown] = []
    stacks = mpi_stacks

    for step in range(cfg.iterations):
        try:
            total, (sdf_lv, plane_lv, depth_lv, nerf_lv), mpi_grads = evaluate_losses(
                grid,
                fragments,
                cfg,
                segmentations=segmentations,
                mpi_stacks=stacks,
                with_grad=True,
            )
        except ValueError as exc:
            raise NumericError(f"loss evaluation failed at step {step}: {exc}", step) from exc
        if not np.isfinite(total.value):
            raise NumericError(f"non-finite loss at step {step}", step)
        history.append(
            LossBreakdown(
                step,
                sdf_lv.value,
                plane_lv.value,
                depth_lv.value,
                nerf_lv.value,
                total.value,
                total.pair_count,
            )
        )
        grad = total.grad_sdf if total.grad_sdf is not None else np.zeros_like(velocity)
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient at step {step}", step)
        velocity = cfg.momentum * velocity - cfg.learning_rate * grad
        velocity[frozen] = 0.0
        flat = grid.sdf.ravel()
        flat += velocity
        np.clip(flat, -clamp, clamp, out=flat)
        grid.sdf = flat.reshape(grid.geometry.dims)
        if stacks and cfg.mpi_learning_rate > 0 and mpi_grads:
            new_stacks = []
            for stack, (d_sigma, d_color) in zip(stacks, mpi_grads):
                density = np.maximum(stack.density - cfg.mpi_learning_rate * d_sigma, 0.0)
                color = np.clip(stack.color - cfg.mpi_learning_rate * d_color, 0.0, 1.0)
                new_stacks.append(replace(stack, density=density, color=color))
            stacks = new_stacks
    return grid, history


def finite_diff_grad(evaluate, grid: VoxelGrid, voxel_indices, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar loss at selected flat voxel indices.

    `evaluate` maps a VoxelGrid to a float and is treated as a black box; this
    is the independent oracle for the analytic gradients.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    out = np.zeros(len(voxel_indices))
    work = grid.copy()
    flat = work.sdf.ravel()
    for n, idx in enumerate(voxel_indices):
        orig = flat[idx]
        flat[idx] = orig + h
        hi = evaluate(work)
        flat[idx] = orig - h
        lo = evaluate(work)
        flat[idx] = orig
        out[n] = (hi - lo) / (2.0 * h)
    return out
