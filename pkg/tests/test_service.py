import numpy as np
import pytest
from fastapi.testclient import TestClient

from voxrecon import fileio
from voxrecon.service import create_app
from voxrecon.synth import demo_scene, save_scene


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(), raise_server_exceptions=False)


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scene") / "room.txt"
    save_scene(demo_scene(), path)
    return path


def _synth(client, scene_file, out_dir, frames=4):
    return client.post(
        "/synth",
        json={
            "scene_file": str(scene_file),
            "out_dir": str(out_dir),
            "n_frames": frames,
            "radius": 0.4,
            "width": 64,
            "image_height": 48,
            "fov_deg": 60.0,
        },
    )


class TestHealthAndConfig:
    def test_health(self, client):
        r = client.get("/health")
        assert r.status_code == 200 and r.json()["status"] == "ok"

    def test_default_config_carries_reference_constants(self, client):
        cfg = client.get("/config/defaults").json()
        assert cfg["grid"]["voxel_size"] == 0.04
        assert cfg["grid"]["dims"] == [96, 96, 96]
        assert cfg["grid"]["truncation"] == 0.30
        assert cfg["grid"]["max_depth"] == 3.0
        assert cfg["keyframes"]["rotation_deg"] == 15.0
        assert cfg["keyframes"]["translation_m"] == 0.3
        assert cfg["weights"] == {"sdf": 1.0, "plane": 0.05, "depth": 1.0, "nerf": 1.0}


class TestErrorMapping:
    def test_missing_scene_is_config_error(self, client, tmp_path):
        r = _synth(client, tmp_path / "nope.txt", tmp_path / "out")
        assert r.status_code == 422
        assert r.json()["detail"]["kind"] == "config"

    def test_validation_error_names_field(self, client):
        r = client.post("/synth", json={"scene_file": "x", "out_dir": "y", "n_frames": 0})
        assert r.status_code == 422
        detail = r.json()["detail"]
        assert any("n_frames" in str(item.get("loc", [])) for item in detail)

    def test_unknown_eval_kind_rejected(self, client):
        r = client.post("/eval", json={"pred": "a", "gt": "b", "kind": "volume"})
        assert r.status_code == 422


class TestPipelineEndpoints:
    def test_synth_fuse_mesh_render_eval(self, client, scene_file, tmp_path):
        views = tmp_path / "views"
        r = _synth(client, scene_file, views, frames=6)
        assert r.status_code == 200, r.text
        assert r.json() == {"frames": 6, "out_dir": str(views)}
        assert (views / "trajectory.txt").exists()
        assert len(list(views.glob("*.png"))) == 6
        assert len(list(views.glob("*.pfm"))) == 6

        ckpt = tmp_path / "grid.vsdf"
        r = client.post(
            "/fuse",
            json={
                "views_dir": str(views),
                "out_checkpoint": str(ckpt),
                "grid": {"voxel_size": 0.08, "dims": [32, 32, 32], "truncation": 0.3, "max_depth": 3.0,
                         "origin": [-1.24, -1.24, -1.24]},
            },
        )
        assert r.status_code == 200, r.text
        assert r.json()["valid_voxels"] > 0

        ply = tmp_path / "mesh.ply"
        r = client.post("/mesh", json={"checkpoint": str(ckpt), "out_ply": str(ply)})
        assert r.status_code == 200
        assert r.json()["triangles"] > 0

        rendered = tmp_path / "rendered"
        r = client.post(
            "/render-depth",
            json={"source": str(ply), "trajectory": str(views / "trajectory.txt"), "out_dir": str(rendered)},
        )
        assert r.status_code == 200
        assert r.json()["frames"] == 6

        r = client.post("/eval", json={"pred": str(rendered), "gt": str(views), "kind": "depth"})
        assert r.status_code == 200
        metrics = r.json()["metrics"]
        assert metrics["abs_rel"] < 0.2
        assert metrics["comp"] > 0.5

    def test_eval_identical_dirs_zero(self, client, scene_file, tmp_path):
        views = tmp_path / "views"
        _synth(client, scene_file, views, frames=2)
        r = client.post("/eval", json={"pred": str(views), "gt": str(views), "kind": "depth"})
        assert r.status_code == 200
        m = r.json()["metrics"]
        assert m["abs_rel"] == 0.0 and m["delta1"] == 1.0 and m["comp"] == 1.0

    def test_mesh_of_all_positive_grid_warns_empty(self, client, tmp_path):
        from voxrecon.voxel import GridGeometry, VoxelGrid

        ckpt = tmp_path / "empty.vsdf"
        fileio.save_checkpoint(VoxelGrid.constant(GridGeometry((0, 0, 0), 0.1, (8, 8, 8)), 0.2), ckpt)
        r = client.post("/mesh", json={"checkpoint": str(ckpt), "out_ply": str(tmp_path / "m.ply")})
        assert r.status_code == 200
        body = r.json()
        assert body["triangles"] == 0
        assert "empty" in body["warning"]

    def test_fuse_max_depth_zero_warns(self, client, scene_file, tmp_path):
        views = tmp_path / "views"
        _synth(client, scene_file, views, frames=2)
        r = client.post(
            "/fuse",
            json={
                "views_dir": str(views),
                "out_checkpoint": str(tmp_path / "g.vsdf"),
                "grid": {"voxel_size": 0.08, "dims": [16, 16, 16], "max_depth": 0.0},
            },
        )
        assert r.status_code == 200
        assert r.json()["valid_voxels"] == 0
        assert "no valid voxels" in r.json()["warning"]

    def test_optimize_small_run(self, client, scene_file, tmp_path):
        views = tmp_path / "views"
        _synth(client, scene_file, views, frames=4)
        ckpt = tmp_path / "opt.vsdf"
        csv = tmp_path / "loss.csv"
        r = client.post(
            "/optimize",
            json={
                "views_dir": str(views),
                "out_checkpoint": str(ckpt),
                "out_csv": str(csv),
                "init": "tsdf",
                "grid": {"voxel_size": 0.16, "dims": [16, 16, 16], "truncation": 0.3,
                         "origin": [-1.2, -1.2, -1.2]},
                "optim": {"learning_rate": 10.0, "iterations": 2, "use_coplanar": False},
                "rotation_deg": 10.0,
                "translation_m": 0.1,
                "views_per_fragment": 4,
            },
        )
        assert r.status_code == 200, r.text
        assert r.json()["steps"] == 2
        hist = fileio.load_loss_csv(csv)
        assert len(hist) == 2
        assert fileio.load_checkpoint(ckpt).geometry.dims == (16, 16, 16)


class TestMeshEval:
    def test_eval_mesh_self(self, client, tmp_path):
        from voxrecon.voxel import GridGeometry, VoxelGrid, marching_cubes

        geo = GridGeometry((-0.8, -0.8, -0.8), 0.05, (33, 33, 33), truncation=10.0)
        sdf = np.linalg.norm(geo.centers(), axis=1) - 0.5
        mesh = marching_cubes(VoxelGrid(geo, sdf.reshape(geo.dims), np.ones(geo.dims, bool)))
        ply = tmp_path / "sphere.ply"
        fileio.save_ply(mesh, ply)
        r = client.post(
            "/eval",
            json={"pred": str(ply), "gt": str(ply), "kind": "mesh", "n_samples": 5000, "seed": 2},
        )
        assert r.status_code == 200
        m = r.json()["metrics"]
        assert m["fscore"] > 0.99 and m["acc"] < 0.02  # acc limited by 5k-sample spacing


class TestRenderFromCheckpoint:
    def test_checkpoint_source_meshes_then_renders(self, client, scene_file, tmp_path):
        views = tmp_path / "views"
        _synth(client, scene_file, views, frames=2)
        ckpt = tmp_path / "g.vsdf"
        client.post(
            "/fuse",
            json={
                "views_dir": str(views),
                "out_checkpoint": str(ckpt),
                "grid": {"voxel_size": 0.08, "dims": [32, 32, 32], "origin": [-1.24, -1.24, -1.24]},
            },
        )
        out = tmp_path / "depths"
        r = client.post(
            "/render-depth",
            json={"source": str(ckpt), "trajectory": str(views / "trajectory.txt"), "out_dir": str(out)},
        )
        assert r.status_code == 200
        assert len(list(out.glob("*.pfm"))) == 2
