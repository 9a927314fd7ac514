"""End-to-end pipeline steps operating on files.

The service endpoints (and through them the CLI) call these functions; each
reads its inputs from disk, runs one stage, writes outputs, and returns a
summary dict. Missing or malformed inputs raise ConfigError; numerical
failures raise NumericError; genuine I/O failures surface as OSError.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import fileio
from .config import GridConfig
from .errors import ConfigError
from .fusion import fragment_grid, make_fragments, select_keyframes
from .geometry import CameraView, Intrinsics, project_points
from .metrics import depth_metrics, mesh_metrics
from .optimize import OptimConfig, optimize_sdf
from .synth import load_scene, make_orbit_trajectory, render_scene
from .voxel import GridGeometry, VoxelGrid, marching_cubes, render_mesh_depth, tsdf_fuse


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def make_intrinsics(width: int, height: int, fov_deg: float = 60.0) -> Intrinsics:
    if width < 2 or height < 2:
        raise ConfigError("image size must be at least 2x2")
    if not (0 < fov_deg < 180):
        raise ConfigError("fov_deg must lie in (0, 180)")
    fx = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return Intrinsics(fx, fx, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def run_synth(
    scene_path,
    out_dir,
    *,
    n_frames: int = 16,
    radius: float = 0.6,
    center=(0.0, 0.0, 0.0),
    height: float = 0.0,
    width: int = 320,
    image_height: int = 240,
    fov_deg: float = 60.0,
) -> dict:
    """Render a posed orbit of a scene to PNG + PFM + trajectory.txt."""
    scene = load_scene(_require(scene_path, "scene file"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    intr = make_intrinsics(width, image_height, fov_deg)
    poses = make_orbit_trajectory(center, radius, n_frames, height=height)
    views = []
    for i, pose in enumerate(poses):
        image, depth = render_scene(scene, intrinsics=intr, pose=pose)
        fileio.save_png(image, out / f"frame_{i:04d}.png")
        fileio.save_pfm(depth, out / f"frame_{i:04d}.pfm")
        views.append(CameraView(intr, pose))
    fileio.save_trajectory(views, out / "trajectory.txt")
    return {"frames": n_frames, "out_dir": str(out)}


def load_views(views_dir, *, need_images=True, need_depth=False) -> list[CameraView]:
    d = _require(views_dir, "views directory")
    try:
        views = fileio.load_trajectory(d / "trajectory.txt")
    except (ValueError, FileNotFoundError) as exc:
        raise ConfigError(f"cannot read trajectory in {d}: {exc}") from exc
    for i, view in enumerate(views):
        if need_images:
            p = d / f"frame_{i:04d}.png"
            if not p.exists():
                raise ConfigError(f"missing image {p}")
            view.image = fileio.load_png(p)
        if need_depth:
            p = d / f"frame_{i:04d}.pfm"
            if not p.exists():
                raise ConfigError(f"missing depth map {p}")
            view.depth = fileio.load_pfm(p).depth
    return views


def _grid_geometry(views, grid: GridConfig) -> GridGeometry:
    return fragment_grid(
        views,
        dims=grid.dims,
        voxel_size=grid.voxel_size,
        truncation=grid.truncation,
        center_depth=grid.center_depth,
        origin=grid.origin,
    )


def run_fuse(views_dir, out_checkpoint, grid: GridConfig | None = None) -> dict:
    """Fuse ground-truth depth maps into a TSDF checkpoint."""
    grid = grid or GridConfig()
    views = load_views(views_dir, need_images=False, need_depth=True)
    geo = _grid_geometry(views, grid)
    fused = tsdf_fuse(views, geo, max_depth=grid.max_depth)
    fileio.save_checkpoint(fused, out_checkpoint)
    valid = int(fused.valid.sum())
    result = {"checkpoint": str(out_checkpoint), "valid_voxels": valid}
    if valid == 0:
        result["warning"] = "fused grid has no valid voxels"
    return result


def _observed_mask(geo: GridGeometry, views) -> np.ndarray:
    seen = np.zeros(geo.num_voxels, dtype=bool)
    centers = geo.centers()
    for view in views:
        cam = view.pose.apply(centers)
        _, _, ok = project_points(view.intrinsics, cam)
        seen |= ok
    return seen


def run_optimize(
    views_dir,
    out_checkpoint,
    out_csv,
    *,
    init: str = "constant",
    init_checkpoint=None,
    init_value: float | None = None,
    grid: GridConfig | None = None,
    optim: OptimConfig | None = None,
    rotation_deg: float = 15.0,
    translation_m: float = 0.3,
    views_per_fragment: int = 9,
) -> dict:
    """Recover a voxel-SDF grid by gradient descent on the multi-view losses."""
    grid_cfg = grid or GridConfig()
    cfg = optim or OptimConfig()
    views = load_views(views_dir, need_images=True, need_depth=(init == "tsdf"))
    kept = select_keyframes(
        [v.pose for v in views], rotation_deg=rotation_deg, translation_m=translation_m
    )
    keyframes = [views[i] for i in kept]
    if len(keyframes) < 2:
        raise ConfigError("fewer than 2 keyframes selected; loosen the thresholds")
    n_frag = min(views_per_fragment, len(keyframes))
    fragments = make_fragments(
        keyframes,
        n_frag,
        dims=grid_cfg.dims,
        voxel_size=grid_cfg.voxel_size,
        truncation=grid_cfg.truncation,
        center_depth=grid_cfg.center_depth,
    )
    if grid_cfg.origin is not None or len(fragments) == 1:
        geo = (
            _grid_geometry(keyframes, grid_cfg)
            if grid_cfg.origin is not None
            else fragments[0].grid_region
        )
    else:
        origins = np.stack([f.grid_region.origin for f in fragments])
        lo = origins.min(axis=0)
        hi = (origins + grid_cfg.voxel_size * (np.array(grid_cfg.dims) - 1)).max(axis=0)
        dims = tuple(np.round((hi - lo) / grid_cfg.voxel_size).astype(int) + 1)
        geo = GridGeometry(lo, grid_cfg.voxel_size, dims, grid_cfg.truncation)

    if init == "checkpoint":
        if init_checkpoint is None:
            raise ConfigError("init=checkpoint requires init_checkpoint")
        start = fileio.load_checkpoint(_require(init_checkpoint, "init checkpoint"))
    elif init == "tsdf":
        start = tsdf_fuse(keyframes, geo, max_depth=grid_cfg.max_depth)
    elif init == "constant":
        value = 0.5 * geo.truncation if init_value is None else init_value
        sdf = np.full(geo.dims, value)
        valid = _observed_mask(geo, keyframes).reshape(geo.dims)
        start = VoxelGrid(geo, sdf, valid)
    else:
        raise ConfigError(f"unknown init mode {init!r}")

    result, history = optimize_sdf(start, fragments, None, cfg)
    fileio.save_checkpoint(result, out_checkpoint)
    fileio.save_loss_csv(history, out_csv)
    return {
        "checkpoint": str(out_checkpoint),
        "loss_csv": str(out_csv),
        "steps": len(history),
        "final_total": history[-1].total if history else 0.0,
        "fragments": len(fragments),
        "keyframes": kept,
    }


def run_mesh(checkpoint, out_ply, iso: float = 0.0) -> dict:
    grid = fileio.load_checkpoint(_require(checkpoint, "checkpoint"))
    mesh = marching_cubes(grid, iso)
    fileio.save_ply(mesh, out_ply)
    result = {
        "ply": str(out_ply),
        "vertices": len(mesh.vertices),
        "triangles": len(mesh.triangles),
    }
    if mesh.is_empty:
        result["warning"] = "empty mesh (no zero crossing)"
    return result


def run_render_depth(source, trajectory_path, out_dir) -> dict:
    """Render depth maps of a mesh (PLY) or checkpoint into every trajectory view."""
    src = _require(source, "mesh or checkpoint")
    if src.suffix == ".ply":
        mesh = fileio.load_ply(src)
    else:
        mesh = marching_cubes(fileio.load_checkpoint(src))
    views = fileio.load_trajectory(_require(trajectory_path, "trajectory"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, view in enumerate(views):
        dm = render_mesh_depth(mesh, view)
        fileio.save_pfm(dm, out / f"frame_{i:04d}.pfm")
        fileio.save_depth_png(dm, out / f"frame_{i:04d}.png")
    return {"frames": len(views), "out_dir": str(out)}


def _depth_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    files = sorted(path.glob("*.pfm"))
    if not files:
        raise ConfigError(f"no PFM depth maps under {path}")
    return files


def run_eval(pred, gt, kind: str, *, threshold=0.05, n_samples=10000, seed=0) -> dict:
    """Compare predictions against ground truth; returns the metric table."""
    if kind == "depth":
        pred_files = _depth_files(_require(pred, "prediction"))
        gt_files = _depth_files(_require(gt, "ground truth"))
        if len(pred_files) != len(gt_files):
            raise ConfigError("prediction and ground-truth depth counts differ")
        tables = []
        for pf, gf in zip(pred_files, gt_files):
            tables.append(depth_metrics(fileio.load_pfm(pf), fileio.load_pfm(gf)).as_dict())
        keys = tables[0].keys()
        return {k: float(np.mean([t[k] for t in tables])) for k in keys}
    if kind == "mesh":
        pm = fileio.load_ply(_require(pred, "prediction mesh"))
        gm = fileio.load_ply(_require(gt, "ground-truth mesh"))
        return mesh_metrics(pm, gm, threshold=threshold, n_samples=n_samples, seed=seed).as_dict()
    raise ConfigError(f"unknown eval kind {kind!r}")
