import numpy as np
import pytest

from voxrecon.metrics import depth_metrics, mesh_metrics, sample_mesh_surface
from voxrecon.voxel import DepthMap, GridGeometry, TriangleMesh, VoxelGrid, marching_cubes


def _gt_depth(seed=0):
    rng = np.random.default_rng(seed)
    d = 1.0 + rng.random((20, 30))
    d[rng.random((20, 30)) < 0.1] = 0.0
    return DepthMap(d)


class TestDepthMetrics:
    def test_identity(self):
        gt = _gt_depth()
        m = depth_metrics(gt, gt)
        assert m.abs_rel == 0 and m.rmse == 0 and m.sq_rel == 0
        assert m.delta1 == 1.0 and m.comp == 1.0 and m.sc_inv == 0.0

    def test_constant_ratio_closed_forms(self):
        gt = _gt_depth(1)
        pred = DepthMap(1.2 * gt.depth)
        m = depth_metrics(pred, gt)
        assert m.abs_rel == pytest.approx(0.2, abs=1e-9)
        assert m.delta1 == 1.0  # 1.2 < 1.25
        assert m.rmse_log == pytest.approx(np.log(1.2), abs=1e-9)
        assert m.sc_inv == pytest.approx(0.0, abs=1e-9)

    def test_ratio_above_threshold(self):
        gt = _gt_depth(2)
        m = depth_metrics(DepthMap(1.3 * gt.depth), gt)
        assert m.delta1 == 0.0

    def test_comp_counts_valid_predictions(self):
        gt = DepthMap(np.full((10, 10), 2.0))
        pred = np.full((10, 10), 2.0)
        pred[:5] = 0.0
        m = depth_metrics(DepthMap(pred), gt)
        assert m.comp == pytest.approx(0.5)
        assert m.abs_rel == 0.0  # over jointly-valid pixels only

    def test_pixel_order_invariance(self):
        gt = _gt_depth(3)
        pred = DepthMap(np.clip(gt.depth * 1.1, 0, None))
        m1 = depth_metrics(pred, gt)
        perm = np.random.default_rng(0).permutation(20)
        m2 = depth_metrics(DepthMap(pred.depth[perm]), DepthMap(gt.depth[perm]))
        for k, v in m1.as_dict().items():
            assert v == pytest.approx(m2.as_dict()[k])

    def test_no_overlap_error(self):
        with pytest.raises(ValueError):
            depth_metrics(DepthMap(np.zeros((4, 4))), DepthMap(np.ones((4, 4))))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            depth_metrics(DepthMap(np.ones((4, 4))), DepthMap(np.ones((4, 5))))


def _sphere_mesh(radius=0.5, center=(0.0, 0.0, 0.0)):
    geo = GridGeometry((-0.8 + center[0], -0.8 + center[1], -0.8 + center[2]), 0.05, (33, 33, 33), truncation=10.0)
    sdf = np.linalg.norm(geo.centers() - np.asarray(center), axis=1) - radius
    return marching_cubes(VoxelGrid(geo, sdf.reshape(geo.dims), np.ones(geo.dims, bool)))


def _plane_mesh():
    geo = GridGeometry((-0.8, -0.8, -0.2), 0.05, (33, 33, 9), truncation=10.0)
    sdf = geo.centers()[:, 2] - 0.025
    return marching_cubes(VoxelGrid(geo, sdf.reshape(geo.dims), np.ones(geo.dims, bool)))


def _translate(mesh, offset):
    return TriangleMesh(mesh.vertices + np.asarray(offset), mesh.triangles, mesh.normals)


class TestMeshMetrics:
    def test_self_comparison(self):
        mesh = _sphere_mesh()
        m = mesh_metrics(mesh, mesh, 0.05, 10000, seed=0)
        assert m.fscore >= 0.99
        assert m.acc < 0.01

    def test_small_normal_translation(self):
        # a flat patch shifted along its normal: every nearest distance is
        # exactly the shift
        mesh = _plane_mesh()
        m = mesh_metrics(_translate(mesh, [0, 0, 0.04]), mesh, 0.05, 10000, seed=1)
        assert m.prec > 0.99 and m.recall > 0.99
        assert m.acc == pytest.approx(0.04, abs=0.005)

    def test_large_translation_zero_fscore(self):
        mesh = _plane_mesh()
        m = mesh_metrics(_translate(mesh, [0.0, 0.0, 0.10]), mesh, 0.05, 10000, seed=2)
        assert m.fscore < 0.05

    def test_swap_symmetry(self):
        a = _sphere_mesh(radius=0.45)
        b = _sphere_mesh(radius=0.5)
        m_ab = mesh_metrics(a, b, 0.05, 10000, seed=3)
        m_ba = mesh_metrics(b, a, 0.05, 10000, seed=3)
        assert m_ab.acc == pytest.approx(m_ba.comp, abs=0.02)
        assert m_ab.prec == pytest.approx(m_ba.recall, abs=0.02)

    def test_vertex_order_invariance(self):
        mesh = _sphere_mesh()
        perm = np.random.default_rng(5).permutation(len(mesh.vertices))
        inv = np.argsort(perm)
        shuffled = TriangleMesh(mesh.vertices[perm], inv[mesh.triangles], mesh.normals[perm])
        m1 = mesh_metrics(mesh, mesh, 0.05, 5000, seed=4)
        m2 = mesh_metrics(shuffled, mesh, 0.05, 5000, seed=4)
        assert m1.fscore == pytest.approx(m2.fscore, abs=0.02)

    def test_empty_mesh_error(self):
        mesh = _sphere_mesh()
        empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int))
        with pytest.raises(ValueError):
            mesh_metrics(empty, mesh)

    def test_seeded_sampling_reproducible(self):
        mesh = _sphere_mesh()
        p1 = sample_mesh_surface(mesh, 100, np.random.default_rng(7))
        p2 = sample_mesh_surface(mesh, 100, np.random.default_rng(7))
        assert np.array_equal(p1, p2)
