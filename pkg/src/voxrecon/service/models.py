"""Pydantic request/response schemas for the reconstruction service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from ..config import GridConfig
from ..losses import LossWeights
from ..optimize import OptimConfig


class GridParams(BaseModel):
    voxel_size: float = Field(default=0.04, gt=0)
    dims: tuple[int, int, int] = (96, 96, 96)
    truncation: float = Field(default=0.30, gt=0)
    max_depth: float = Field(default=3.0, ge=0)
    origin: Optional[tuple[float, float, float]] = None
    center_depth: float = 2.0

    def to_config(self) -> GridConfig:
        return GridConfig(
            voxel_size=self.voxel_size,
            dims=self.dims,
            truncation=self.truncation,
            max_depth=self.max_depth,
            origin=self.origin,
            center_depth=self.center_depth,
        )


class WeightParams(BaseModel):
    sdf: float = Field(default=1.0, ge=0)
    plane: float = Field(default=0.05, ge=0)
    depth: float = Field(default=1.0, ge=0)
    nerf: float = Field(default=1.0, ge=0)


class OptimParams(BaseModel):
    learning_rate: float = Field(default=1.0, gt=0)
    iterations: int = Field(default=100, ge=0)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    weights: WeightParams = WeightParams()
    use_photometric: bool = True
    use_coplanar: bool = True
    huber_delta: Optional[float] = None
    min_points: int = Field(default=100, ge=3)
    plane_eps: float = Field(default=1e-6, ge=0)
    freeze_plane: bool = False
    seg_k: float = Field(default=300.0, gt=0)
    seg_min_size: int = Field(default=500, ge=1)
    seg_sigma: float = Field(default=0.8, ge=0)
    inter_fragment: bool = False
    seed: int = 0
    log_interval: int = 1

    def to_config(self) -> OptimConfig:
        w = self.weights
        return OptimConfig(
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            momentum=self.momentum,
            weights=LossWeights(w.sdf, w.plane, w.depth, w.nerf),
            use_photometric=self.use_photometric,
            use_coplanar=self.use_coplanar,
            huber_delta=self.huber_delta,
            min_points=self.min_points,
            plane_eps=self.plane_eps,
            freeze_plane=self.freeze_plane,
            seg_k=self.seg_k,
            seg_min_size=self.seg_min_size,
            seg_sigma=self.seg_sigma,
            inter_fragment=self.inter_fragment,
            seed=self.seed,
            log_interval=self.log_interval,
        )


class SynthRequest(BaseModel):
    scene_file: str
    out_dir: str
    n_frames: int = Field(default=16, ge=1)
    radius: float = Field(default=0.6, gt=0)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    height: float = 0.0
    width: int = Field(default=320, ge=2)
    image_height: int = Field(default=240, ge=2)
    fov_deg: float = Field(default=60.0, gt=0, lt=180)


class SynthResponse(BaseModel):
    frames: int
    out_dir: str


class FuseRequest(BaseModel):
    views_dir: str
    out_checkpoint: str
    grid: GridParams = GridParams()


class FuseResponse(BaseModel):
    checkpoint: str
    valid_voxels: int
    warning: Optional[str] = None


class OptimizeRequest(BaseModel):
    views_dir: str
    out_checkpoint: str
    out_csv: str
    init: str = Field(default="constant", pattern="^(constant|tsdf|checkpoint)$")
    init_checkpoint: Optional[str] = None
    init_value: Optional[float] = None
    grid: GridParams = GridParams()
    optim: OptimParams = OptimParams()
    rotation_deg: float = 15.0
    translation_m: float = 0.3
    views_per_fragment: int = Field(default=9, ge=2)


class OptimizeResponse(BaseModel):
    checkpoint: str
    loss_csv: str
    steps: int
    final_total: float
    fragments: int
    keyframes: list[int]


class MeshRequest(BaseModel):
    checkpoint: str
    out_ply: str
    iso: float = 0.0


class MeshResponse(BaseModel):
    ply: str
    vertices: int
    triangles: int
    warning: Optional[str] = None


class RenderDepthRequest(BaseModel):
    source: str  # .ply mesh or voxel checkpoint
    trajectory: str
    out_dir: str


class RenderDepthResponse(BaseModel):
    frames: int
    out_dir: str


class EvalRequest(BaseModel):
    pred: str
    gt: str
    kind: str = Field(pattern="^(depth|mesh)$")
    threshold: float = Field(default=0.05, gt=0)
    n_samples: int = Field(default=10000, ge=1)
    seed: int = 0


class EvalResponse(BaseModel):
    kind: str
    metrics: dict[str, float]


class ConfigResponse(BaseModel):
    grid: dict
    keyframes: dict
    segmentation: dict
    weights: dict


class HealthResponse(BaseModel):
    status: str = "ok"
