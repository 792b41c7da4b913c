"""splatfield: sparse-coefficient semantic feature splatting for 3D Gaussian scenes.

Scenes of 3D Gaussians carry per-point top-K simplex coefficients over a
global per-level codebook. Rendering the coefficient map costs K blended
channels per Gaussian regardless of the codebook size L, and one matrix
product recovers the full D-dimensional feature map afterwards — so query
cost is decoupled from feature dimensionality.
"""

from .core import (
    Codebook,
    Gaussian,
    Scene,
    SceneConfig,
    SparseCoefficients,
    build_covariance,
    compact,
    densify,
    reconstruct_feature,
)
from .errors import (
    FormatError,
    ResourceLimitError,
    SplatfieldError,
    TrainingError,
    TruncatedFileError,
    ValidationError,
)
from .projection import (
    Camera,
    CameraPose,
    ProjectedGaussian,
    TileBinning,
    bin_tiles,
    eval_alpha,
    project_gaussian,
    project_scene,
)
from .query import (
    QueryEmbedding,
    RelevancyMap,
    iou,
    localize,
    mean_filter,
    relevancy_map,
    segment,
    select_level,
)
from .rasterizer import Framebuffer, blend_pixel_dense, oracle_render, render_dense
from .sparse_splat import (
    CoefficientMap,
    FeatureMapSet,
    StageTimings,
    decode,
    query_pipeline,
    splat_multilevel,
    splat_sparse,
)
from .train import (
    TrainConfig,
    TrainingBatch,
    backward,
    forward_loss,
    normalize_coefficients,
    train_field,
)

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "Gaussian",
    "Scene",
    "SceneConfig",
    "SparseCoefficients",
    "build_covariance",
    "compact",
    "densify",
    "reconstruct_feature",
    "FormatError",
    "ResourceLimitError",
    "SplatfieldError",
    "TrainingError",
    "TruncatedFileError",
    "ValidationError",
    "Camera",
    "CameraPose",
    "ProjectedGaussian",
    "TileBinning",
    "bin_tiles",
    "eval_alpha",
    "project_gaussian",
    "project_scene",
    "QueryEmbedding",
    "RelevancyMap",
    "iou",
    "localize",
    "mean_filter",
    "relevancy_map",
    "segment",
    "select_level",
    "Framebuffer",
    "blend_pixel_dense",
    "oracle_render",
    "render_dense",
    "CoefficientMap",
    "FeatureMapSet",
    "StageTimings",
    "decode",
    "query_pipeline",
    "splat_multilevel",
    "splat_sparse",
    "TrainConfig",
    "TrainingBatch",
    "backward",
    "forward_loss",
    "normalize_coefficients",
    "train_field",
]
