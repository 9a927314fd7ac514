import numpy as np
import pytest

from voxrecon.geometry import project_points, world_to_cam
from voxrecon.pipeline import make_intrinsics
from voxrecon.synth import (
    Box,
    Plane,
    Scene,
    Sphere,
    Texture,
    analytic_sdf,
    demo_scene,
    load_scene,
    make_orbit_trajectory,
    render_scene,
    save_scene,
)

from conftest import render_views, walled_room


class TestAnalyticSdf:
    def test_sphere_outside(self):
        scene = Scene([Sphere(np.zeros(3), 1.0)])
        assert analytic_sdf(scene, np.array([2.0, 0, 0])) == pytest.approx(1.0)

    def test_sphere_inside(self):
        scene = Scene([Sphere(np.zeros(3), 1.0)])
        assert analytic_sdf(scene, np.array([0.0, 0, 0])) == pytest.approx(-1.0)

    def test_box_room_interior_against_brute_force(self):
        # solid box 4x4x3: interior point 0.5 m from the nearest wall is inside
        scene = Scene([Box(np.zeros(3), np.array([2.0, 2.0, 1.5]))])
        p = np.array([1.5, 0.3, 0.2])  # 0.5 from the x=+2 wall
        val = float(analytic_sdf(scene, p))
        assert val == pytest.approx(-0.5)
        # brute force: sample the wall surfaces densely, take min distance
        rng = np.random.default_rng(0)
        pts = []
        for axis in range(3):
            for sign in (-1, 1):
                q = rng.uniform(-1, 1, (4000, 3)) * [2.0, 2.0, 1.5]
                q[:, axis] = sign * [2.0, 2.0, 1.5][axis]
                pts.append(q)
        surf = np.concatenate(pts)
        brute = np.min(np.linalg.norm(surf - p, axis=1))
        assert abs(val) == pytest.approx(brute, abs=0.02)

    def test_eikonal_property(self):
        scene = walled_room()
        rng = np.random.default_rng(2)
        pts = rng.uniform(-0.9, 0.9, (200, 3))
        # stay away from the medial axis (center plane between opposite walls)
        keep = np.abs(np.abs(pts).max(axis=1) - np.abs(pts).min(axis=1)) > 0.05
        pts = pts[keep]
        h = 1e-4
        grad = np.zeros_like(pts)
        for a in range(3):
            dp = np.zeros(3)
            dp[a] = h
            grad[:, a] = (analytic_sdf(scene, pts + dp) - analytic_sdf(scene, pts - dp)) / (2 * h)
        norms = np.linalg.norm(grad, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-3


class TestRenderScene:
    def test_fronto_wall_constant_depth(self):
        scene = Scene([Plane([0, 0, 2.0], [0, 0, -1.0], Texture("constant"))])
        intr = make_intrinsics(64, 48, 60.0)
        from voxrecon.geometry import Pose

        _, depth = render_scene(scene, intrinsics=intr, pose=Pose.identity())
        assert np.allclose(depth, 2.0)

    def test_miss_is_invalid_and_black(self):
        scene = Scene([Sphere([0, 0, 2.0], 0.2, Texture("constant"))])
        intr = make_intrinsics(64, 48, 60.0)
        from voxrecon.geometry import Pose

        image, depth = render_scene(scene, intrinsics=intr, pose=Pose.identity())
        corner_missed = depth[0, 0] == 0.0
        assert corner_missed and np.all(image[0, 0] == 0.0)
        assert depth[24, 32] > 0  # center hits the sphere

    def test_checker_period(self):
        # fronto wall with checker of world period s: the image color
        # alternates every fx*s/z pixels along the central row (wall kept off
        # the cell lattice so only x crossings flip)
        s, z = 0.25, 2.03
        scene = Scene([Plane([0, 0, z], [0, 0, -1.0], Texture("checker", scale=s, seed=1))])
        intr = make_intrinsics(320, 240, 60.0)
        from voxrecon.geometry import Pose

        image, _ = render_scene(scene, intrinsics=intr, pose=Pose.identity())
        row = image[120, :, 0]
        flips = np.count_nonzero(np.abs(np.diff(row)) > 1e-6)
        cell_px = intr.fx * s / z
        assert flips == pytest.approx(320 / cell_px, abs=2)

    def test_multiview_photometric_consistency(self):
        """Backprojecting gt depth between views reproduces colors: validates
        the scenes before they validate the losses."""
        scene = walled_room()
        intr = make_intrinsics(640, 480, 60.0)
        poses = make_orbit_trajectory((0, 0, 0), 0.45, 8)[:2]
        va, vb = render_views(scene, poses, intr)
        h, w = 480, 640
        us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        sel = (us % 16 == 0) & (vs % 16 == 0)
        d = va.depth[sel.astype(bool)]
        rays = np.stack(
            [(us[sel] - intr.cx) / intr.fx, (vs[sel] - intr.cy) / intr.fy, np.ones(sel.sum())],
            axis=1,
        )
        pts_cam_a = rays * d[:, None]
        pts_world = va.pose.inverse().apply(pts_cam_a)
        pts_cam_b = vb.pose.apply(pts_world)
        u2, v2, ok = project_points(intr, pts_cam_b)
        from voxrecon.geometry import bilinear_sample_many

        ca = va.image[vs[sel].astype(int), us[sel].astype(int)]
        cb, _, _ = bilinear_sample_many(vb.image, u2[ok], v2[ok])
        err = np.abs(ca[ok] - cb).max()
        assert ok.sum() > 100
        assert err < 0.05


class TestOrbit:
    def test_four_poses_pairwise_ninety(self):
        from voxrecon.geometry import rotation_angle_deg

        poses = make_orbit_trajectory((0, 0, 0), 1.0, 4)
        assert len(poses) == 4
        for a, b in zip(poses, poses[1:]):
            assert rotation_angle_deg(a, b) == pytest.approx(90.0)

    def test_single_pose(self):
        assert len(make_orbit_trajectory((0, 0, 0), 1.0, 1)) == 1

    def test_look_at_property(self):
        center = np.array([0.2, -0.1, 0.4])
        for pose in make_orbit_trajectory(center, 0.8, 5):
            cam = world_to_cam(pose, center)
            assert abs(cam[0]) < 1e-9 and abs(cam[1]) < 1e-9

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            make_orbit_trajectory((0, 0, 0), 0.0, 4)
        with pytest.raises(ValueError):
            make_orbit_trajectory((0, 0, 0), 1.0, 0)


class TestSceneFile:
    def test_roundtrip(self, tmp_path):
        scene = Scene(
            [
                Sphere([0.1, 0.2, 0.3], 0.5, Texture("checker", scale=0.2, seed=3)),
                Box([0, 0, 0], [1, 1, 1], Texture("noise", scale=0.5, seed=9)),
                Plane([0, 0, 2], [0, 0, -1], Texture("gradient", scale=1.0, seed=4)),
            ]
        )
        path = tmp_path / "scene.txt"
        save_scene(scene, path)
        back = load_scene(path)
        assert len(back.primitives) == 3
        rng = np.random.default_rng(5)
        pts = rng.uniform(-2, 2, (50, 3))
        assert np.allclose(analytic_sdf(scene, pts), analytic_sdf(back, pts))
        for a, b in zip(scene.primitives, back.primitives):
            p = rng.uniform(-2, 2, (10, 3))
            assert np.allclose(a.texture.sample(p), b.texture.sample(p))

    def test_demo_scene_renders(self):
        scene = demo_scene()
        from voxrecon.geometry import Pose

        image, depth = render_scene(scene, intrinsics=make_intrinsics(32, 24, 60.0), pose=Pose.identity())
        assert depth.min() > 0  # inside the room every ray hits a wall

    def test_unknown_primitive_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("cone center=0,0,0\n")
        with pytest.raises(ValueError):
            load_scene(path)
