"""CPU differentiable gaussian splatting: forward rasterizer, analytic
backward pass, finite-difference audit, and an image-fitting optimizer."""

from .binning import TILE_SIZE, TileGrid, assign_tiles, sort_bins
from .cli import main, parse_scene, read_image, serialize_scene, write_image
from .core import (
    Camera,
    Cov3DBundle,
    Gaussian3D,
    compose_covariance_3d,
    frobenius_inner,
    quat_to_rotmat,
)
from .gradcheck import (
    AUDIT_CLASSES,
    ClassCheck,
    GradReport,
    audit_scene,
    finite_difference,
    make_audit_scene,
    run_audit,
)
from .optimize import FitConfig, fit, init_random
from .proj_backward import (
    SceneGradients,
    cov2d_backward,
    covariance3d_backward,
    mean2d_backward,
    scene_backward,
    world_backward,
)
from .projection import (
    DILATION,
    ProjectedGaussian,
    bounding_radius,
    camera_to_pixel,
    project_covariance,
    project_gaussian,
    projection_jacobian,
    world_to_camera,
)
from .raster_backward import (
    Splat2DGrads,
    accumulate_image_backward,
    composite_pixel_backward,
    transmittance_replay,
)
from .raster_forward import (
    ALPHA_MAX,
    ALPHA_MIN,
    SIGMA_CUT,
    T_MIN,
    ImageBuffer,
    RenderAux,
    RenderResult,
    composite_pixel,
    eval_alpha,
    render,
    render_brute_force,
)

__version__ = "0.1.0"

__all__ = [
    "ALPHA_MAX",
    "ALPHA_MIN",
    "AUDIT_CLASSES",
    "Camera",
    "ClassCheck",
    "Cov3DBundle",
    "DILATION",
    "FitConfig",
    "Gaussian3D",
    "GradReport",
    "ImageBuffer",
    "ProjectedGaussian",
    "RenderAux",
    "RenderResult",
    "SIGMA_CUT",
    "SceneGradients",
    "Splat2DGrads",
    "TILE_SIZE",
    "T_MIN",
    "TileGrid",
    "accumulate_image_backward",
    "assign_tiles",
    "audit_scene",
    "bounding_radius",
    "camera_to_pixel",
    "compose_covariance_3d",
    "composite_pixel",
    "composite_pixel_backward",
    "cov2d_backward",
    "covariance3d_backward",
    "eval_alpha",
    "finite_difference",
    "fit",
    "frobenius_inner",
    "init_random",
    "main",
    "make_audit_scene",
    "mean2d_backward",
    "parse_scene",
    "project_covariance",
    "project_gaussian",
    "projection_jacobian",
    "quat_to_rotmat",
    "read_image",
    "render",
    "render_brute_force",
    "run_audit",
    "scene_backward",
    "serialize_scene",
    "sort_bins",
    "transmittance_replay",
    "world_backward",
    "world_to_camera",
    "write_image",
]
