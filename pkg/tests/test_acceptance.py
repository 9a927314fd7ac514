"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
Gradient checks compare analytic gradients against central finite differences
(h = 1e-4) at fixed seeds; samples whose +/-h interval straddles a kink of the
piecewise-smooth losses (detected from one-sided differences only) are
excluded before the comparison, and well over 200 samples remain in each
check.
"""

import time

import numpy as np
import pytest

from voxrecon.config import default_config
from voxrecon.fusion import FeatureVolume, Fragment, GruWeights, gru_fuse, gru_gates
from voxrecon.geometry import Pose
from voxrecon.losses import (
    LossWeights,
    coplanar_loss,
    depth_consistency_loss,
    sdf_photometric_loss,
)
from voxrecon.metrics import depth_metrics, mesh_metrics
from voxrecon.mpi import MpiStack, render_target, render_volumetric, render_volumetric_vjp, uniform_disparities
from voxrecon.optimize import OptimConfig, optimize_sdf
from voxrecon.pipeline import make_intrinsics
from voxrecon.superpixel import SuperpixelMap, felzenszwalb_segment
from voxrecon.synth import analytic_sdf, make_orbit_trajectory
from voxrecon.voxel import (
    DepthMap,
    GridGeometry,
    TriangleMesh,
    VoxelGrid,
    marching_cubes,
    render_mesh_depth,
    tsdf_fuse,
)

from conftest import SEG_PARAMS, fd_gradcheck, rel_err, render_views


def _report(criterion: int, ok: bool, detail: str):
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# 1. gradient oracle


def test_criterion_1_gradient_oracle(orbit_views, orbit_grid, orbit_segmentations):
    t0 = time.monotonic()
    rng = np.random.default_rng(42)
    grid = orbit_grid.copy()
    grid.sdf = grid.sdf + rng.uniform(-0.08, 0.08, grid.sdf.shape) * grid.valid
    results = []

    # L_sdf
    lv = sdf_photometric_loss(grid, orbit_views)
    cand = np.nonzero(grid.valid.ravel() & (np.abs(lv.grad_sdf) > 1e-6))[0]
    sample = rng.choice(cand, 240, replace=False)
    fd, smooth = fd_gradcheck(
        lambda g: sdf_photometric_loss(g, orbit_views, with_grad=False).value, grid, sample
    )
    err = rel_err(lv.grad_sdf[sample][smooth], fd[smooth])
    results.append(("L_sdf", int(smooth.sum()), float(err.max())))

    # L_plane
    lv = coplanar_loss(grid, orbit_views, orbit_segmentations)
    cand = np.nonzero(grid.valid.ravel() & (np.abs(lv.grad_sdf) > 1e-6))[0]
    sample = rng.choice(cand, 240, replace=False)
    fd, smooth = fd_gradcheck(
        lambda g: coplanar_loss(g, orbit_views, orbit_segmentations, with_grad=False).value,
        grid,
        sample,
    )
    err = rel_err(lv.grad_sdf[sample][smooth], fd[smooth])
    results.append(("L_plane", int(smooth.sum()), float(err.max())))

    # L_depth: parameters are the two depth maps' pixel values
    ref = 1.0 + rng.random((40, 50))
    tgt = (1.0 + rng.random((40, 50))) * 0.4
    dc = depth_consistency_loss(DepthMap(ref), DepthMap(tgt))
    h = 1e-4
    pix = [(int(i), int(j)) for i, j in rng.integers(0, (40, 50), size=(110, 2))]
    kept = 0
    worst = 0.0
    for i, j in pix:
        for arr, grad, is_ref in ((ref, dc.grad_reference, True), (tgt, dc.grad_target, False)):
            hi = arr.copy()
            hi[i, j] += h
            lo = arr.copy()
            lo[i, j] -= h
            if is_ref:
                vh = depth_consistency_loss(DepthMap(hi), DepthMap(tgt)).value
                vl = depth_consistency_loss(DepthMap(lo), DepthMap(tgt)).value
            else:
                vh = depth_consistency_loss(DepthMap(ref), DepthMap(hi)).value
                vl = depth_consistency_loss(DepthMap(ref), DepthMap(lo)).value
            fd1 = (vh - vl) / (2 * h)
            kept += 1
            worst = max(worst, abs(grad[i, j] - fd1) / (abs(fd1) + 1e-6))
    results.append(("L_depth", kept, worst))

    # MPI rendering: d(image, depth)/d(sigma, color)
    intr = make_intrinsics(24, 18, 60.0)
    n = 6
    disp = uniform_disparities(n, 0.5, 6.0)
    color = rng.random((n, 18, 24, 3))
    sigma = 2.0 * rng.random((n, 18, 24))
    gi = rng.random((18, 24, 3))
    gd = rng.random((18, 24))
    ds, dcol = render_volumetric_vjp(MpiStack(intr, Pose.identity(), disp, color, sigma), gi, gd)

    def mpi_loss(sig, col):
        rv = render_volumetric(MpiStack(intr, Pose.identity(), disp, col, sig))
        return float((rv.image * gi).sum() + (rv.depth * gd).sum())

    worst = 0.0
    kept = 0
    for _ in range(120):
        k, i, j = rng.integers(n), rng.integers(18), rng.integers(24)
        s2 = sigma.copy()
        s2[k, i, j] += h
        s3 = sigma.copy()
        s3[k, i, j] -= h
        fd1 = (mpi_loss(s2, color) - mpi_loss(s3, color)) / (2 * h)
        worst = max(worst, abs(ds[k, i, j] - fd1) / (abs(fd1) + 1e-6))
        kept += 1
    for _ in range(80):
        k, i, j, c = rng.integers(n), rng.integers(18), rng.integers(24), rng.integers(3)
        c2 = color.copy()
        c2[k, i, j, c] = min(c2[k, i, j, c] + h, 1.0)
        c3 = color.copy()
        c3[k, i, j, c] = max(c3[k, i, j, c] - h, 0.0)
        step = c2[k, i, j, c] - c3[k, i, j, c]
        fd1 = (mpi_loss(sigma, c2) - mpi_loss(sigma, c3)) / step
        worst = max(worst, abs(dcol[k, i, j, c] - fd1) / (abs(fd1) + 1e-6))
        kept += 1
    results.append(("MPI", kept, worst))

    elapsed = time.monotonic() - t0
    ok = all(n_kept >= 200 and err < 1e-3 for _, n_kept, err in results) and elapsed < 60.0
    detail = (
        "; ".join(f"{name}: {n_kept} samples, max rel {err:.2e}" for name, n_kept, err in results)
        + f"; runtime {elapsed:.1f}s < 60s"
    )
    _report(1, ok, detail)


# ---------------------------------------------------------------------------
# 2. zero-loss fixed points


def test_criterion_2_zero_loss_fixed_points(wallrig_views, wallrig_grid):
    segs = [felzenszwalb_segment(v.image, **SEG_PARAMS) for v in wallrig_views]
    l_sdf = sdf_photometric_loss(wallrig_grid, wallrig_views, with_grad=False)
    l_plane = coplanar_loss(wallrig_grid, wallrig_views, segs, with_grad=False)

    # exact-coplanar configuration: surface points exactly on z = 2
    geo = GridGeometry((-0.6, -0.45, 1.7), 0.06, (21, 16, 11), truncation=10.0)
    c = geo.centers()
    ray = c / np.linalg.norm(c, axis=1, keepdims=True)
    sdf = (2.0 - c[:, 2]) / ray[:, 2]
    exact = VoxelGrid(geo, sdf.reshape(geo.dims), np.ones(geo.dims, bool))
    intr = make_intrinsics(160, 120, 60.0)
    from voxrecon.geometry import CameraView

    views = [CameraView(intr, Pose.identity(), np.zeros((120, 160, 3)))] * 2
    seg_full = [SuperpixelMap(np.zeros((120, 160), int), 1)] * 2
    l_exact = coplanar_loss(exact, views, seg_full, eps=0.0, with_grad=False)

    ok = (
        l_sdf.pair_count > 1000
        and l_sdf.value < 0.02
        and l_plane.pair_count > 1000
        and l_plane.value < 1e-3
        and l_exact.value < 1e-9
    )
    _report(
        2,
        ok,
        f"gt TSDF: L_sdf {l_sdf.value:.2e} < 0.02 ({l_sdf.pair_count} pairs), "
        f"L_plane {l_plane.value:.2e} < 1e-3 ({l_plane.pair_count} pts); "
        f"exact-coplanar L_plane {l_exact.value:.2e} < 1e-9",
    )


# ---------------------------------------------------------------------------
# 3. pipeline loop


def test_criterion_3_pipeline_loop(room_scene):
    t0 = time.monotonic()
    intr = make_intrinsics(320, 240, 70.0)
    poses = make_orbit_trajectory((0, 0, 0), 0.45, 8, look_at=(0, 0, 0))
    poses += make_orbit_trajectory((0, 0, 0), 0.45, 8, look_at=(0, 0, -0.35), height=0.5)
    poses += make_orbit_trajectory((0, 0, 0), 0.45, 8, look_at=(0, 0, 0.35), height=-0.5)
    views = render_views(room_scene, poses, intr)

    geo = GridGeometry((-1.26, -1.26, -1.26), 0.04, (64, 64, 64), truncation=0.30)
    fused = tsdf_fuse(views, geo, max_depth=3.0)
    mesh = marching_cubes(fused)

    per_view = [depth_metrics(render_mesh_depth(mesh, v), DepthMap(v.depth)) for v in views[:8]]
    abs_rel = float(np.mean([m.abs_rel for m in per_view]))
    delta1 = float(np.mean([m.delta1 for m in per_view]))

    gt_sdf = analytic_sdf(room_scene, geo.centers())
    gt_mesh = marching_cubes(VoxelGrid(geo, gt_sdf.reshape(geo.dims), np.ones(geo.dims, bool)))
    mm = mesh_metrics(mesh, gt_mesh, 0.05, 10000, seed=3)
    elapsed = time.monotonic() - t0

    ok = abs_rel < 0.05 and delta1 > 0.95 and mm.fscore > 0.8 and elapsed < 120.0
    _report(
        3,
        ok,
        f"AbsRel {abs_rel:.4f} < 0.05, delta1 {delta1:.4f} > 0.95, "
        f"F-score@5cm {mm.fscore:.3f} > 0.8; runtime {elapsed:.1f}s < 120s",
    )


# ---------------------------------------------------------------------------
# 4. optimization improvement


def test_criterion_4_optimization_improvement(orbit_views, orbit_grid, tmp_path):
    from voxrecon import fileio

    frag = Fragment(orbit_views, orbit_grid.geometry)
    init = orbit_grid.copy()
    init.sdf = np.clip(init.sdf + 0.05, -0.3, 0.3)
    cfg = OptimConfig(
        learning_rate=30.0,
        iterations=500,
        weights=LossWeights(1.0, 0.05, 1.0, 1.0),
        seg_k=SEG_PARAMS["k"],
        seg_min_size=SEG_PARAMS["min_size"],
        seg_sigma=SEG_PARAMS["sigma"],
    )
    out, hist = optimize_sdf(init, [frag], None, cfg)
    v = orbit_grid.valid
    before = float(np.abs(init.sdf - orbit_grid.sdf)[v].mean())
    after = float(np.abs(out.sdf - orbit_grid.sdf)[v].mean())
    tot = [h.total for h in hist]
    worst_increase = max(b - a for a, b in zip(tot, tot[1:]))

    # bitwise-identical loss CSVs across repeated runs (the implementation is
    # vectorized single-threaded, so host thread counts cannot perturb it)
    short = OptimConfig(
        learning_rate=30.0,
        iterations=40,
        weights=LossWeights(1.0, 0.05, 1.0, 1.0),
        seg_k=SEG_PARAMS["k"],
        seg_min_size=SEG_PARAMS["min_size"],
        seg_sigma=SEG_PARAMS["sigma"],
    )
    csvs = []
    for run in range(2):
        _, h2 = optimize_sdf(init, [frag], None, short)
        path = tmp_path / f"loss_{run}.csv"
        fileio.save_loss_csv(h2, path)
        csvs.append(path.read_bytes())

    ok = (
        len(hist) == 500
        and after <= 0.5 * before
        and worst_increase <= 1e-6
        and csvs[0] == csvs[1]
    )
    _report(
        4,
        ok,
        f"mean |sdf-gt| {before:.4f} -> {after:.4f} ({100 * after / before:.1f}% of init, need <=50%), "
        f"worst loss increase {worst_increase:.2e} <= 1e-6, CSV bitwise identical: {csvs[0] == csvs[1]}",
    )


# ---------------------------------------------------------------------------
# 5. MPI correctness


def test_criterion_5_mpi_correctness():
    intr = make_intrinsics(32, 24, 60.0)
    rng = np.random.default_rng(5)
    n = 8
    disp = uniform_disparities(n, 0.5, 6.0)
    mpi = MpiStack(intr, Pose.identity(), disp, rng.random((n, 24, 32, 3)), 2.0 * rng.random((n, 24, 32)))

    from voxrecon.mpi import _composite, _pixel_ray_norms, _shading_deltas

    z = mpi.depths[:, None, None] * np.ones_like(mpi.density)
    rn, _, _ = _pixel_ray_norms(intr)
    _, _, t_final, (_, _, w) = _composite(mpi.density, mpi.color, z, _shading_deltas(z, rn))
    energy_err = float(np.abs(w.sum(axis=0) + t_final - 1.0).max())

    rv = render_volumetric(mpi)
    rt = render_target(mpi, intr, Pose.identity())
    identity_err = max(
        float(np.abs(rt.image - rv.image).max()), float(np.abs(rt.depth - rv.depth).max())
    )

    opaque = MpiStack(
        intr, Pose.identity(), [0.5], np.full((1, 24, 32, 3), 0.6), np.full((1, 24, 32), 1e6)
    )
    target_pose = Pose(np.eye(3), np.array([0.06, -0.04, 0.12]))
    rt2 = render_target(opaque, intr, target_pose)
    from voxrecon.geometry import relative_pose

    rel = relative_pose(target_pose, Pose.identity())
    us, vs = np.meshgrid(np.arange(32.0), np.arange(24.0))
    d_t = np.stack([(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)], -1)
    lam = (2.0 - rel.translation[2]) / (d_t @ rel.rotation.T)[..., 2]
    covered = rt2.transmittance < 1e-3
    depth_err = float(np.abs(rt2.depth - lam)[covered].max())

    ok = energy_err < 1e-9 and identity_err < 1e-6 and depth_err < 1e-3 and covered.mean() > 0.5
    _report(
        5,
        ok,
        f"energy |sum w + T - 1| {energy_err:.1e} < 1e-9; target@source err {identity_err:.1e} < 1e-6; "
        f"opaque-plane depth err {depth_err:.1e} < 1e-3",
    )


# ---------------------------------------------------------------------------
# 6. reference-constant conformance


def test_criterion_6_config_constants():
    cfg = default_config().as_dict()
    expected = {
        "grid": {
            "voxel_size": 0.04,
            "dims": (96, 96, 96),
            "truncation": 0.30,
            "max_depth": 3.0,
            "origin": None,
            "center_depth": 2.0,
        },
        "keyframes": {"rotation_deg": 15.0, "translation_m": 0.3, "views_per_fragment": 9},
        "segmentation": {"k": 300.0, "min_size": 500, "sigma": 0.8, "min_points": 100},
        "weights": {"sdf": 1.0, "plane": 0.05, "depth": 1.0, "nerf": 1.0},
    }
    ok = cfg == expected
    _report(
        6,
        ok,
        "default config serializes voxel 0.04 m, 96^3 fragment, truncation 0.30 m, "
        "max depth 3.0 m, keyframes 15 deg / 0.3 m, weights (1, 0.05, 1, 1)",
    )


# ---------------------------------------------------------------------------
# 7. metric closed forms


def test_criterion_7_metric_closed_forms():
    rng = np.random.default_rng(7)
    gt = DepthMap(1.0 + rng.random((24, 32)))
    m = depth_metrics(DepthMap(1.2 * gt.depth), gt)
    depth_ok = abs(m.abs_rel - 0.2) < 1e-9 and m.delta1 == 1.0

    geo = GridGeometry((-0.8, -0.8, -0.2), 0.05, (33, 33, 9), truncation=10.0)
    sdf = geo.centers()[:, 2] - 0.025
    plane = marching_cubes(VoxelGrid(geo, sdf.reshape(geo.dims), np.ones(geo.dims, bool)))
    moved = TriangleMesh(plane.vertices + [0.0, 0.0, 0.10], plane.triangles, plane.normals)
    mm = mesh_metrics(moved, plane, 0.05, 10000, seed=1)
    mesh_ok = mm.fscore < 0.05

    ok = depth_ok and mesh_ok
    _report(
        7,
        ok,
        f"abs_rel(1.2 gt) = {m.abs_rel:.12f} (0.2 +/- 1e-9), delta1 = {m.delta1}; "
        f"F-score of 0.10 m translated copy = {mm.fscore:.4f} < 0.05",
    )


# ---------------------------------------------------------------------------
# 8. GRU gate properties


def test_criterion_8_gru_gates():
    geo = GridGeometry((0, 0, 0), 0.1, (100, 10, 10))  # 10^4 voxels
    c = 8
    rng = np.random.default_rng(8)
    h = FeatureVolume(geo, np.tanh(rng.standard_normal((10000, c))), np.ones(10000, int))
    g = FeatureVolume(geo, rng.standard_normal((10000, c)), np.ones(10000, int))
    w = GruWeights.random(c, scale=0.7, seed=9)
    z, r = gru_gates(h, g, w)
    gates_ok = 0.0 < z.min() and z.max() < 1.0 and 0.0 < r.min() and r.max() < 1.0

    closed = GruWeights(
        np.zeros((c, 2 * c)), np.full(c, -60.0),
        w.w_r, w.b_r, w.w_h, w.b_h,
    )
    preserved = gru_fuse(h, g, closed)
    pres_err = float(np.abs(preserved.values - h.values).max())

    ok = gates_ok and pres_err < 1e-6
    _report(
        8,
        ok,
        f"gates in (0,1) over 10^4 random inputs (z in [{z.min():.2e}, {1 - z.max():.2e} from 1]); "
        f"closed-gate preservation error {pres_err:.2e} < 1e-6",
    )
