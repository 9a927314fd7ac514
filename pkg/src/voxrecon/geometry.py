"""Camera models, rigid transforms, projection, and bilinear image sampling.

Conventions used throughout the package: right-handed coordinates, the camera
looks down +z, image u runs rightward (columns) and v downward (rows).
Images are float arrays of shape (H, W) or (H, W, C) with values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping world coordinates to camera coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) batch."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self . other)(x) = self(other(x))."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def camera_center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def optical_axis(self) -> np.ndarray:
        """Viewing direction (+z of the camera) in world coordinates."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Pixel:
    """Continuous pixel location; `behind` marks points with z <= 0."""

    u: float
    v: float
    in_bounds: bool
    behind: bool = False


@dataclass
class CameraView:
    """A posed camera with its RGB image and optional ground-truth depth."""

    intrinsics: Intrinsics
    pose: Pose
    image: np.ndarray | None = None
    depth: np.ndarray | None = None
    name: str = ""


def world_to_cam(pose: Pose, point: np.ndarray) -> np.ndarray:
    """Map a world point (or (N,3) batch) into camera coordinates."""
    return pose.apply(point)


def project(intr: Intrinsics, cam_point: np.ndarray) -> Pixel:
    """Pinhole projection of a camera-frame point.

    Returns a behind-camera marker (nan coordinates, in_bounds False) when
    z <= 0 so loss code can skip the pair instead of aborting.
    """
    x, y, z = np.asarray(cam_point, dtype=float).reshape(3)
    if z <= 0.0:
        return Pixel(float("nan"), float("nan"), False, behind=True)
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    inb = (0.0 <= u <= intr.width - 1) and (0.0 <= v <= intr.height - 1)
    return Pixel(u, v, inb)


def project_points(intr: Intrinsics, cam_points: np.ndarray):
    """Vectorized projection of (N, 3) camera points.

    Returns (u, v, valid) where valid combines z > 0 and in-bounds.
    """
    p = np.asarray(cam_points, dtype=float)
    z = p[:, 2]
    front = z > _EPS
    zs = np.where(front, z, 1.0)
    u = intr.fx * p[:, 0] / zs + intr.cx
    v = intr.fy * p[:, 1] / zs + intr.cy
    inb = (u >= 0.0) & (u <= intr.width - 1) & (v >= 0.0) & (v <= intr.height - 1)
    return u, v, front & inb


def projection_jacobian(intr: Intrinsics, cam_points: np.ndarray) -> np.ndarray:
    """d(u, v)/d(cam point) for (N, 3) points, shape (N, 2, 3).

    Callers must ensure z > 0.
    """
    p = np.asarray(cam_points, dtype=float)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    n = p.shape[0]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = intr.fx / z
    jac[:, 0, 2] = -intr.fx * x / (z * z)
    jac[:, 1, 1] = intr.fy / z
    jac[:, 1, 2] = -intr.fy * y / (z * z)
    return jac


def ray_direction(cam_point: np.ndarray) -> np.ndarray:
    """Unit vector from the camera center through the given point."""
    p = np.asarray(cam_point, dtype=float).reshape(3)
    n = np.linalg.norm(p)
    if n < _EPS:
        raise ValueError("degenerate point: norm below 1e-9")
    return p / n


def ray_directions(cam_points: np.ndarray):
    """Vectorized ray directions; returns (dirs, ok) with ok = norm > eps."""
    p = np.asarray(cam_points, dtype=float)
    n = np.linalg.norm(p, axis=1)
    ok = n > _EPS
    dirs = p / np.where(ok, n, 1.0)[:, None]
    return dirs, ok


def bilinear_sample(image: np.ndarray, p: Pixel) -> np.ndarray:
    """Standard 4-neighbor bilinear blend, exact at integer coordinates."""
    if not p.in_bounds:
        raise ValueError("bilinear_sample requires an in-bounds pixel")
    vals, _, _ = bilinear_sample_many(image, np.array([p.u]), np.array([p.v]))
    out = vals[0]
    return float(out) if out.ndim == 0 else out


def bilinear_sample_many(image: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Vectorized bilinear sampling with derivatives.

    `image` is (H, W) or (H, W, C); u, v are (N,) arrays assumed in bounds
    (clipped defensively). Returns (values, d/du, d/dv), each (N,) or (N, C).
    """
    img = np.asarray(image, dtype=float)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    u = np.clip(np.asarray(u, dtype=float), 0.0, w - 1)
    v = np.clip(np.asarray(v, dtype=float), 0.0, h - 1)
    u0 = np.clip(np.floor(u).astype(int), 0, max(w - 2, 0))
    v0 = np.clip(np.floor(v).astype(int), 0, max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (u - u0)[:, None]
    fv = (v - v0)[:, None]
    i00 = img[v0, u0]
    i01 = img[v0, u1]
    i10 = img[v1, u0]
    i11 = img[v1, u1]
    top = i00 * (1 - fu) + i01 * fu
    bot = i10 * (1 - fu) + i11 * fu
    vals = top * (1 - fv) + bot * fv
    du = (i01 - i00) * (1 - fv) + (i11 - i10) * fv
    dv = bot - top
    if squeeze:
        return vals[:, 0], du[:, 0], dv[:, 0]
    return vals, du, dv


def relative_pose(a: Pose, b: Pose) -> Pose:
    """Transform mapping camera-a coordinates to camera-b coordinates."""
    return b.compose(a.inverse())


def rotation_angle_deg(a: Pose, b: Pose) -> float:
    """Angle of the relative rotation between two poses, in [0, 180] degrees."""
    r = b.rotation @ a.rotation.T
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def look_at_pose(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> Pose:
    """World-to-camera pose with +z toward `target` and v roughly opposing `up`."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    n = np.linalg.norm(fwd)
    if n < _EPS:
        raise ValueError("eye and target coincide")
    z = fwd / n
    down = -np.asarray(up, dtype=float)
    x = np.cross(down, z)
    nx = np.linalg.norm(x)
    if nx < _EPS:
        raise ValueError("view direction is parallel to up")
    x = x / nx
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=0)
    return Pose(r, -r @ eye)
