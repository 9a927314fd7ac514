"""On-disk formats: PLY meshes, PFM depth maps, PNG images, trajectories,
voxel-grid checkpoints, loss CSVs, and fragment manifests."""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

from .fusion import Fragment
from .geometry import CameraView, Intrinsics, Pose
from .optimize import LossBreakdown
from .voxel import DepthMap, GridGeometry, TriangleMesh, VoxelGrid


# --------------------------------------------------------------------------
# PLY (ASCII, vertices with normals + triangle faces)


def save_ply(mesh: TriangleMesh, path) -> None:
    normals = mesh.normals
    if normals is None:
        normals = np.tile([0.0, 0.0, 1.0], (len(mesh.vertices), 1))
    with open(path, "w", encoding="ascii") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(mesh.vertices)}\n")
        for prop in ("x", "y", "z", "nx", "ny", "nz"):
            f.write(f"property float {prop}\n")
        f.write(f"element face {len(mesh.triangles)}\n")
        f.write("property list uchar int vertex_indices\nend_header\n")
        for v, n in zip(mesh.vertices, normals):
            f.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g} {n[0]:.6g} {n[1]:.6g} {n[2]:.6g}\n")
        for t in mesh.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def load_ply(path) -> TriangleMesh:
    with open(path, "r", encoding="ascii") as f:
        if f.readline().strip() != "ply":
            raise ValueError("not a PLY file")
        n_vert = n_face = 0
        props = []
        line = f.readline()
        while line and line.strip() != "end_header":
            tok = line.split()
            if tok[:2] == ["element", "vertex"]:
                n_vert = int(tok[2])
            elif tok[:2] == ["element", "face"]:
                n_face = int(tok[2])
            elif tok[0] == "property" and tok[1] != "list":
                props.append(tok[2])
            line = f.readline()
        verts = np.zeros((n_vert, 3))
        normals = np.zeros((n_vert, 3)) if "nx" in props else None
        for i in range(n_vert):
            vals = [float(x) for x in f.readline().split()]
            verts[i] = vals[:3]
            if normals is not None:
                normals[i] = vals[props.index("nx") : props.index("nx") + 3]
        tris = np.zeros((n_face, 3), dtype=int)
        for i in range(n_face):
            vals = [int(x) for x in f.readline().split()]
            if vals[0] != 3:
                raise ValueError("only triangle faces are supported")
            tris[i] = vals[1:4]
    return TriangleMesh(verts, tris, normals)


# --------------------------------------------------------------------------
# PFM (grayscale, little-endian float32, bottom-up rows, scale -1.0)


def save_pfm(depth: DepthMap | np.ndarray, path) -> None:
    arr = depth.depth if isinstance(depth, DepthMap) else np.asarray(depth, dtype=float)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(arr).astype("<f4").tobytes())


def load_pfm(path) -> DepthMap:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError("not a grayscale PFM file")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(w * h * 4), dtype="<f4" if scale < 0 else ">f4")
    return DepthMap(np.flipud(data.reshape(h, w)).astype(float))


# --------------------------------------------------------------------------
# PNG


def save_png(image: np.ndarray, path) -> None:
    """8-bit RGB from a float image in [0, 1]."""
    arr = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def load_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=float)
    return arr / 255.0


def save_depth_png(depth: DepthMap | np.ndarray, path) -> None:
    """16-bit preview at 1 mm per unit."""
    arr = depth.depth if isinstance(depth, DepthMap) else np.asarray(depth, dtype=float)
    mm = np.clip(np.rint(arr * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)


def save_label_png(labels: np.ndarray, path) -> None:
    """16-bit superpixel label dump for debugging."""
    arr = np.asarray(labels)
    if arr.max() > 65535:
        raise ValueError("too many segments for a 16-bit label map")
    Image.fromarray(arr.astype(np.uint16)).save(path)


# --------------------------------------------------------------------------
# trajectory: one frame per line
# frame_index, 16 numbers (row-major 4x4 world-to-camera), fx fy cx cy width height


def save_trajectory(views: list[CameraView], path) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("# frame_index m00..m33 (row-major world-to-camera) fx fy cx cy width height\n")
        for i, view in enumerate(views):
            m = np.eye(4)
            m[:3, :3] = view.pose.rotation
            m[:3, 3] = view.pose.translation
            nums = " ".join(f"{x:.17g}" for x in m.ravel())
            k = view.intrinsics
            f.write(f"{i} {nums} {k.fx:.17g} {k.fy:.17g} {k.cx:.17g} {k.cy:.17g} {k.width} {k.height}\n")


def load_trajectory(path) -> list[CameraView]:
    views = []
    with open(path, "r", encoding="ascii") as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 23:
                raise ValueError(f"trajectory line has {len(parts)} fields, expected 23")
            m = np.array([float(x) for x in parts[1:17]]).reshape(4, 4)
            fx, fy, cx, cy = (float(x) for x in parts[17:21])
            w, h = int(parts[21]), int(parts[22])
            views.append(
                CameraView(
                    Intrinsics(fx, fy, cx, cy, w, h),
                    Pose(m[:3, :3], m[:3, 3]),
                    name=parts[0],
                )
            )
    if not views:
        raise ValueError("empty trajectory file")
    return views


# --------------------------------------------------------------------------
# voxel grid checkpoint

_MAGIC = b"VSDF"
_VERSION = 1


def save_checkpoint(grid: VoxelGrid, path) -> None:
    geo = grid.geometry
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<3I", *geo.dims))
        f.write(struct.pack("<3d", *geo.origin))
        f.write(struct.pack("<2d", geo.voxel_size, geo.truncation))
        f.write(grid.sdf.astype("<f4").tobytes())
        f.write(np.packbits(grid.valid.ravel()).tobytes())


def load_checkpoint(path) -> VoxelGrid:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError("not a voxel grid checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        dims = struct.unpack("<3I", f.read(12))
        origin = struct.unpack("<3d", f.read(24))
        voxel_size, truncation = struct.unpack("<2d", f.read(16))
        n = dims[0] * dims[1] * dims[2]
        sdf = np.frombuffer(f.read(4 * n), dtype="<f4").astype(float)
        valid = np.unpackbits(np.frombuffer(f.read((n + 7) // 8), dtype=np.uint8))[:n].astype(bool)
    geo = GridGeometry(np.array(origin), voxel_size, dims, truncation)
    return VoxelGrid(geo, sdf.reshape(dims), valid.reshape(dims))


# --------------------------------------------------------------------------
# loss history CSV and fragment manifest

LOSS_CSV_HEADER = "step,L_sdf,L_plane,L_depth,L_nerf,L_total,pair_count"


def save_loss_csv(history: list[LossBreakdown], path) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(LOSS_CSV_HEADER + "\n")
        for row in history:
            f.write(
                f"{row.step},{row.sdf:.17g},{row.plane:.17g},{row.depth:.17g},"
                f"{row.nerf:.17g},{row.total:.17g},{row.pair_count}\n"
            )


def load_loss_csv(path) -> list[LossBreakdown]:
    rows = []
    with open(path, "r", encoding="ascii") as f:
        header = f.readline().strip()
        if header != LOSS_CSV_HEADER:
            raise ValueError("unexpected loss CSV header")
        for line in f:
            p = line.strip().split(",")
            rows.append(
                LossBreakdown(int(p[0]), *[float(x) for x in p[1:6]], int(p[6]))
            )
    return rows


def save_fragment_manifest(fragments: list[Fragment], keyframe_indices: list[list[int]], path) -> None:
    """One fragment per line: keyframe indices then the grid origin."""
    with open(path, "w", encoding="ascii") as f:
        f.write("# fragment_index keyframes=i,j,... origin=x,y,z\n")
        for frag, kf in zip(fragments, keyframe_indices):
            ks = ",".join(str(i) for i in kf)
            o = frag.grid_region.origin
            f.write(f"{frag.index} keyframes={ks} origin={o[0]:.9g},{o[1]:.9g},{o[2]:.9g}\n")
