"""Analytic test scenes: textured primitives, exact SDF oracles, ray-cast rendering.

Scenes stand in for captured indoor sequences. Surfaces use flat albedo (no
shading) so the brightness-constancy assumption behind the photometric loss
holds exactly across views, and all textures are procedural with fixed seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraView, Intrinsics, look_at_pose

_EPS = 1e-9


# --------------------------------------------------------------------------
# textures


@dataclass(frozen=True)
class Texture:
    """Procedural world-space texture: kind in {constant, checker, gradient, noise}."""

    kind: str = "constant"
    scale: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("constant", "checker", "gradient", "noise"):
            raise ValueError(f"unknown texture kind {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("texture scale must be positive")

    def _colors(self):
        rng = np.random.default_rng(self.seed)
        a = 0.2 + 0.6 * rng.random(3)
        b = 0.2 + 0.6 * rng.random(3)
        return a, b

    def sample(self, points: np.ndarray) -> np.ndarray:
        """RGB in [0,1] for (N, 3) world points."""
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        if self.kind == "constant":
            a, _ = self._colors()
            return np.broadcast_to(a, (p.shape[0], 3)).copy()
        if self.kind == "checker":
            a, b = self._colors()
            parity = np.floor(p / self.scale).sum(axis=1).astype(int) % 2
            return np.where(parity[:, None] == 0, a, b)
        if self.kind == "gradient":
            rng = np.random.default_rng(self.seed)
            base = 0.3 + 0.4 * rng.random(3)
            dirs = rng.standard_normal((3, 3))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            phase = (p / self.scale) @ dirs.T
            return np.clip(base + 0.25 * np.sin(phase), 0.0, 1.0)
        # smooth value noise: trilinear blend of a seeded lattice, wrapped,
        # tinted by the seed's base color so differently-seeded surfaces are
        # visually distinct
        rng = np.random.default_rng(self.seed)
        table = rng.random((16, 16, 16, 3))
        base, _ = self._colors()
        q = p / self.scale
        q0 = np.floor(q).astype(int)
        f = q - q0
        f = f * f * (3.0 - 2.0 * f)  # smoothstep keeps lattice kinks mild
        out = np.zeros((p.shape[0], 3))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = (
                        (f[:, 0] if dx else 1 - f[:, 0])
                        * (f[:, 1] if dy else 1 - f[:, 1])
                        * (f[:, 2] if dz else 1 - f[:, 2])
                    )
                    idx = (q0 + np.array([dx, dy, dz])) % 16
                    out += w[:, None] * table[idx[:, 0], idx[:, 1], idx[:, 2]]
        return np.clip(base * (0.5 + 0.8 * out), 0.0, 1.0)


# --------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    texture: Texture = field(default_factory=Texture)

    def sdf(self, p: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(p - np.asarray(self.center), axis=-1)
        return d - self.radius

    def intersect(self, origin, dirs):
        oc = origin - np.asarray(self.center, dtype=float)
        b = dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - c
        hit = disc >= 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t1 = -b - sq
        t2 = -b + sq
        t = np.where(t1 > _EPS, t1, t2)
        t = np.where(hit & (t > _EPS), t, np.inf)
        return t


@dataclass(frozen=True)
class Box:
    """Axis-aligned solid box; a 'room' is simply a box viewed from inside."""

    center: np.ndarray
    half_size: np.ndarray
    texture: Texture = field(default_factory=Texture)

    def sdf(self, p: np.ndarray) -> np.ndarray:
        q = np.abs(p - np.asarray(self.center)) - np.asarray(self.half_size)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def intersect(self, origin, dirs):
        c = np.asarray(self.center, dtype=float)
        h = np.asarray(self.half_size, dtype=float)
        lo, hi = c - h, c + h
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            ta = (lo - origin) * inv
            tb = (hi - origin) * inv
        tmin = np.nanmax(np.minimum(ta, tb), axis=-1)
        tmax = np.nanmin(np.maximum(ta, tb), axis=-1)
        hit = (tmax >= tmin) & (tmax > _EPS)
        t = np.where(tmin > _EPS, tmin, tmax)
        return np.where(hit & (t > _EPS), t, np.inf)


@dataclass(frozen=True)
class Plane:
    """Boundary of the half-space behind `normal` (solid on the -normal side)."""

    point: np.ndarray
    normal: np.ndarray
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        object.__setattr__(self, "normal", n / np.linalg.norm(n))
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))

    def sdf(self, p: np.ndarray) -> np.ndarray:
        return (p - self.point) @ self.normal

    def intersect(self, origin, dirs):
        denom = dirs @ self.normal
        num = (self.point - origin) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        return np.where((np.abs(denom) > _EPS) & (t > _EPS), t, np.inf)


@dataclass
class Scene:
    primitives: list

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene has no primitives")


def analytic_sdf(scene: Scene, p: np.ndarray) -> np.ndarray:
    """Exact signed distance to the nearest primitive surface (union of solids)."""
    p = np.asarray(p, dtype=float)
    vals = np.stack([prim.sdf(p) for prim in scene.primitives], axis=0)
    return np.min(vals, axis=0)


def render_scene(scene: Scene, view: CameraView | None = None, *, intrinsics=None, pose=None):
    """Ray-cast the scene into a camera.

    Returns (image, depth): image is (H, W, 3) in [0,1] with black where rays
    miss, depth is the camera-z of the nearest hit with 0 marking misses.
    """
    if view is not None:
        intrinsics, pose = view.intrinsics, view.pose
    intr: Intrinsics = intrinsics
    h, w = intr.height, intr.width
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    dirs_cam = np.stack(
        [(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)], axis=-1
    ).reshape(-1, 3)
    dirs_cam /= np.linalg.norm(dirs_cam, axis=1, keepdims=True)
    rot = pose.rotation.T
    dirs = dirs_cam @ rot.T
    origin = pose.camera_center()

    t_best = np.full(dirs.shape[0], np.inf)
    owner = np.full(dirs.shape[0], -1, dtype=int)
    for k, prim in enumerate(scene.primitives):
        t = prim.intersect(origin, dirs)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        owner[closer] = k

    hit = np.isfinite(t_best)
    image = np.zeros((h * w, 3))
    depth = np.zeros(h * w)
    if hit.any():
        pts = origin + t_best[hit, None] * dirs[hit]
        # camera z of the hit, not the ray range
        depth[hit] = t_best[hit] * (dirs_cam[hit] @ np.array([0.0, 0.0, 1.0]))
        own = owner[hit]
        for k, prim in enumerate(scene.primitives):
            sel = own == k
            if sel.any():
                img_hit = image[hit]
                img_hit[sel] = prim.texture.sample(pts[sel])
                image[hit] = img_hit
    return image.reshape(h, w, 3), depth.reshape(h, w)


def make_orbit_trajectory(center, radius, n_frames, look_at=None, height=0.0):
    """Evenly spaced azimuth orbit in the horizontal plane, looking at a target."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    center = np.asarray(center, dtype=float)
    target = center if look_at is None else np.asarray(look_at, dtype=float)
    poses = []
    for i in range(n_frames):
        theta = 2.0 * np.pi * i / n_frames
        eye = center + np.array([radius * np.cos(theta), radius * np.sin(theta), height])
        poses.append(look_at_pose(eye, target))
    return poses


# --------------------------------------------------------------------------
# scene description files: one primitive per line, key=value parameters


def _fmt_vec(v):
    return ",".join(f"{x:g}" for x in np.asarray(v, dtype=float))


def _parse_vec(s):
    return np.array([float(x) for x in s.split(",")])


def _texture_tokens(t: Texture):
    return f"texture={t.kind} tex_scale={t.scale:g} tex_seed={t.seed}"


def _texture_from(kv):
    return Texture(
        kind=kv.get("texture", "constant"),
        scale=float(kv.get("tex_scale", 0.25)),
        seed=int(kv.get("tex_seed", 0)),
    )


def save_scene(scene: Scene, path) -> None:
    lines = ["# voxrecon scene"]
    for prim in scene.primitives:
        if isinstance(prim, Sphere):
            lines.append(
                f"sphere center={_fmt_vec(prim.center)} radius={prim.radius:g} "
                + _texture_tokens(prim.texture)
            )
        elif isinstance(prim, Box):
            lines.append(
                f"box center={_fmt_vec(prim.center)} half={_fmt_vec(prim.half_size)} "
                + _texture_tokens(prim.texture)
            )
        elif isinstance(prim, Plane):
            lines.append(
                f"plane point={_fmt_vec(prim.point)} normal={_fmt_vec(prim.normal)} "
                + _texture_tokens(prim.texture)
            )
        else:
            raise ValueError(f"cannot serialize primitive {type(prim).__name__}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_scene(path) -> Scene:
    prims = []
    with open(path, "r", encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            head, *tokens = line.split()
            kv = dict(tok.split("=", 1) for tok in tokens)
            tex = _texture_from(kv)
            if head == "sphere":
                prims.append(Sphere(_parse_vec(kv["center"]), float(kv["radius"]), tex))
            elif head == "box":
                prims.append(Box(_parse_vec(kv["center"]), _parse_vec(kv["half"]), tex))
            elif head == "plane":
                prims.append(Plane(_parse_vec(kv["point"]), _parse_vec(kv["normal"]), tex))
            else:
                raise ValueError(f"unknown primitive {head!r} in scene file")
    return Scene(prims)


def demo_scene(seed: int = 7) -> Scene:
    """Textured 2x2x2 box room used by the documentation and smoke tests."""
    return Scene(
        [Box(np.zeros(3), np.array([1.0, 1.0, 1.0]), Texture("noise", scale=0.45, seed=seed))]
    )
