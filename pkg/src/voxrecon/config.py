"""Default configuration blocks shared by the service, CLI, and tests."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


@dataclass
class GridConfig:
    voxel_size: float = 0.04
    dims: tuple = (96, 96, 96)
    truncation: float = 0.30
    max_depth: float = 3.0
    origin: tuple | None = None  # auto-placed when None
    center_depth: float = 2.0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.voxel_size <= 0 or self.truncation <= 0:
            raise ValueError("grid voxel_size and truncation must be positive")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


@dataclass
class KeyframeConfig:
    rotation_deg: float = 15.0
    translation_m: float = 0.3
    views_per_fragment: int = 9


@dataclass
class SegmentationConfig:
    k: float = 300.0
    min_size: int = 500
    sigma: float = 0.8
    min_points: int = 100


@dataclass
class WeightsConfig:
    sdf: float = 1.0
    plane: float = 0.05
    depth: float = 1.0
    nerf: float = 1.0


@dataclass
class DefaultConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    keyframes: KeyframeConfig = field(default_factory=KeyframeConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    weights: WeightsConfig = field(default_factory=WeightsConfig)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def default_config() -> DefaultConfig:
    return DefaultConfig()
