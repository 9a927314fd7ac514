"""Shared scenes, camera rigs, and the finite-difference gradcheck helper."""

import numpy as np
import pytest

from voxrecon.fusion import Fragment
from voxrecon.geometry import CameraView, look_at_pose
from voxrecon.pipeline import make_intrinsics
from voxrecon.superpixel import felzenszwalb_segment
from voxrecon.synth import Box, Plane, Scene, Texture, make_orbit_trajectory, render_scene
from voxrecon.voxel import GridGeometry, tsdf_fuse

# segmentation parameters tuned for the 160x120 test renders
SEG_PARAMS = dict(k=40.0, min_size=150, sigma=0.8)


def walled_room(half=1.0):
    """Room built from six half-space walls, each with its own texture."""
    walls = [
        ((-half, 0, 0), (1, 0, 0)),
        ((half, 0, 0), (-1, 0, 0)),
        ((0, -half, 0), (0, 1, 0)),
        ((0, half, 0), (0, -1, 0)),
        ((0, 0, -half), (0, 0, 1)),
        ((0, 0, half), (0, 0, -1)),
    ]
    return Scene(
        [
            Plane(np.array(pt, float), np.array(n, float), Texture("noise", scale=0.5, seed=10 + i))
            for i, (pt, n) in enumerate(walls)
        ]
    )


def solid_box_room(seed=7):
    """The same room as a single solid box (one texture for all walls)."""
    return Scene([Box(np.zeros(3), np.ones(3), Texture("noise", scale=0.45, seed=seed))])


def render_views(scene, poses, intr):
    views = []
    for pose in poses:
        image, depth = render_scene(scene, intrinsics=intr, pose=pose)
        views.append(CameraView(intr, pose, image, depth))
    return views


@pytest.fixture(scope="session")
def room_scene():
    return walled_room()


@pytest.fixture(scope="session")
def orbit_views(room_scene):
    """8-view interior orbit at 160x120, FOV 60: the loss test rig."""
    intr = make_intrinsics(160, 120, 60.0)
    poses = make_orbit_trajectory((0, 0, 0), 0.45, 8)
    return render_views(room_scene, poses, intr)


@pytest.fixture(scope="session")
def orbit_grid(orbit_views):
    """Ground-truth TSDF of the room on a 32^3 / 8 cm / 30 cm lattice."""
    geo = GridGeometry((-1.24, -1.24, -1.24), 0.08, (32, 32, 32), truncation=0.3)
    return tsdf_fuse(orbit_views, geo, max_depth=3.0)


@pytest.fixture(scope="session")
def orbit_fragment(orbit_views, orbit_grid):
    return Fragment(orbit_views, orbit_grid.geometry)


@pytest.fixture(scope="session")
def orbit_segmentations(orbit_views):
    return [felzenszwalb_segment(v.image, **SEG_PARAMS) for v in orbit_views]


@pytest.fixture(scope="session")
def wallrig_views(room_scene):
    """Two narrow-FOV cameras facing each wall head-on (12 views).

    Fronto-parallel geometry keeps the ground-truth TSDF an exact fixed point
    of the losses up to interpolation error.
    """
    intr = make_intrinsics(160, 120, 22.0)
    poses = []
    for n in [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]:
        n = np.array(n, float)
        tangent = np.array([0, 0, 1.0]) if abs(n[2]) < 0.5 else np.array([1.0, 0, 0])
        up = (0, 0, 1) if abs(n[2]) < 0.5 else (0, 1, 0)
        for s in (+0.08, -0.08):
            eye = s * tangent
            poses.append(look_at_pose(eye, eye + n, up=up))
    return render_views(room_scene, poses, intr)


@pytest.fixture(scope="session")
def wallrig_grid(wallrig_views):
    geo = GridGeometry((-1.26, -1.26, -1.26), 0.04, (64, 64, 64), truncation=0.12)
    return tsdf_fuse(wallrig_views, geo, max_depth=3.0)


def fd_gradcheck(loss_fn, grid, indices, h=1e-4, side_tol=1e-3):
    """Central finite differences with a one-sided smoothness filter.

    Returns (fd, smooth): `smooth` marks samples where the left and right
    one-sided slopes agree, i.e. the piecewise-smooth loss has no kink inside
    [-h, +h]. Only oracle-side information is used for the filter.
    """
    base = loss_fn(grid)
    work = grid.copy()
    flat = work.sdf.ravel()
    fd = np.zeros(len(indices))
    smooth = np.zeros(len(indices), dtype=bool)
    for n, idx in enumerate(indices):
        orig = flat[idx]
        flat[idx] = orig + h
        hi = loss_fn(work)
        flat[idx] = orig - h
        lo = loss_fn(work)
        flat[idx] = orig
        fd[n] = (hi - lo) / (2.0 * h)
        g_plus = (hi - base) / h
        g_minus = (base - lo) / h
        smooth[n] = abs(g_plus - g_minus) / (abs(fd[n]) + 1e-6) < side_tol
    return fd, smooth


def rel_err(analytic, fd):
    return np.abs(analytic - fd) / (np.abs(fd) + 1e-6)
