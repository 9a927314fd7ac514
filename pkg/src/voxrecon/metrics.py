"""2D rendered-depth metrics and 3D mesh metrics."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial import cKDTree

from .voxel import DepthMap, TriangleMesh


@dataclass
class DepthMetrics:
    abs_rel: float
    abs_diff: float
    sq_rel: float
    rmse: float
    rmse_log: float
    sc_inv: float
    delta1: float
    comp: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class MeshMetrics:
    acc: float
    comp: float
    prec: float
    recall: float
    fscore: float

    def as_dict(self) -> dict:
        return asdict(self)


def depth_metrics(pred: DepthMap, gt: DepthMap) -> DepthMetrics:
    """Standard depth error table over jointly-valid pixels.

    `comp` is the fraction of gt-valid pixels with a valid prediction; all
    other metrics average over pixels valid in both maps.
    """
    if pred.depth.shape != gt.depth.shape:
        raise ValueError("depth map dimensions do not match")
    gt_valid = gt.valid
    joint = gt_valid & pred.valid
    n_gt = int(gt_valid.sum())
    n = int(joint.sum())
    if n == 0:
        raise ValueError("no jointly-valid pixels to evaluate")
    d = pred.depth[joint]
    g = gt.depth[joint]
    err = np.abs(d - g)
    z = np.log(d) - np.log(g)
    return DepthMetrics(
        abs_rel=float((err / g).mean()),
        abs_diff=float(err.mean()),
        sq_rel=float((err**2 / g).mean()),
        rmse=float(np.sqrt((err**2).mean())),
        rmse_log=float(np.sqrt((z**2).mean())),
        sc_inv=float(np.sqrt(max((z**2).mean() - z.mean() ** 2, 0.0))),
        delta1=float((np.maximum(d / g, g / d) < 1.25).mean()),
        comp=float(n / n_gt),
    )


def sample_mesh_surface(mesh: TriangleMesh, n_samples: int, rng) -> np.ndarray:
    """Area-weighted uniform surface sampling."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    tri = rng.choice(len(areas), size=n_samples, p=areas / total)
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    r1 = rng.random(n_samples)
    r2 = rng.random(n_samples)
    flip = r1 + r2 > 1.0  # fold back into the triangle
    r1[flip] = 1.0 - r1[flip]
    r2[flip] = 1.0 - r2[flip]
    return a + r1[:, None] * (b - a) + r2[:, None] * (c - a)


def mesh_metrics(
    pred: TriangleMesh,
    gt: TriangleMesh,
    threshold: float = 0.05,
    n_samples: int = 10000,
    seed: int = 0,
) -> MeshMetrics:
    """Point-sampled mesh distances: accuracy/completeness and F-score.

    Both meshes are sampled with `n_samples` seeded points (offset streams so
    a self-comparison is honest) and compared by nearest neighbor.
    """
    if pred.is_empty or gt.is_empty:
        raise ValueError("mesh_metrics requires non-empty meshes")
    pts_pred = sample_mesh_surface(pred, n_samples, np.random.default_rng(seed))
    pts_gt = sample_mesh_surface(gt, n_samples, np.random.default_rng(seed + 1))
    d_pred_to_gt, _ = cKDTree(pts_gt).query(pts_pred)
    d_gt_to_pred, _ = cKDTree(pts_pred).query(pts_gt)
    prec = float((d_pred_to_gt < threshold).mean())
    recall = float((d_gt_to_pred < threshold).mean())
    fscore = 0.0 if prec + recall == 0 else 2.0 * prec * recall / (prec + recall)
    return MeshMetrics(
        acc=float(d_pred_to_gt.mean()),
        comp=float(d_gt_to_pred.mean()),
        prec=prec,
        recall=recall,
        fscore=fscore,
    )
