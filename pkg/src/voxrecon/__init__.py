"""voxrecon: self-supervised voxel-SDF scene reconstruction at desk scale.

Core machinery: multi-view SDF losses with analytic gradients, TSDF fusion
and marching cubes, multiplane-image rendering, superpixel co-planarity, and
mesh/depth evaluation metrics, wrapped by a FastAPI service and a CLI.
"""

from .config import DefaultConfig, GridConfig, default_config
from .errors import ConfigError, NumericError, ReconError
from .fusion import (
    FeatureVolume,
    Fragment,
    GruWeights,
    fuse_views,
    gru_fuse,
    integrate_fragment,
    make_fragments,
    select_keyframes,
)
from .geometry import (
    CameraView,
    Intrinsics,
    Pixel,
    Pose,
    bilinear_sample,
    project,
    ray_direction,
    relative_pose,
    rotation_angle_deg,
    world_to_cam,
)
from .losses import (
    LossValue,
    LossWeights,
    PlaneParam,
    coplanar_loss,
    depth_consistency_loss,
    fit_plane,
    nerf_loss,
    recover_scale,
    sdf_photometric_loss,
    smooth_loss,
    ssim,
    surface_point,
    total_loss,
)
from .metrics import DepthMetrics, MeshMetrics, depth_metrics, mesh_metrics
from .mpi import (
    MpiStack,
    RenderedView,
    compose_over,
    render_target,
    render_volumetric,
    uniform_disparities,
    warp_plane_pixel,
)
from .optimize import OptimConfig, finite_diff_grad, optimize_sdf
from .superpixel import SuperpixelMap, felzenszwalb_segment
from .synth import Box, Plane, Scene, Sphere, Texture, analytic_sdf, make_orbit_trajectory, render_scene
from .voxel import (
    DepthMap,
    GridGeometry,
    TriangleMesh,
    VoxelGrid,
    marching_cubes,
    render_mesh_depth,
    sdf_pseudo_depth,
    tsdf_fuse,
    voxel_center,
)

__version__ = "0.1.0"
