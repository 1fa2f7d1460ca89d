"""Point-based clothed-body deformation on a continuous template surface."""

from .geometry import (
    LocalFrame,
    PointCloud,
    Skeleton,
    SurfacePoint,
    TemplateBody,
    chamfer,
    farthest_point_sample,
    local_frame,
    sample_surface,
    vertex_normals,
)
from .body import HumanoidConfig, Pose, PosedBody, build_humanoid, lbs_pose
from .losses import LossReport, LossWeights, total_loss
from .model import ClothModel, ModelConfig
from .synthdata import (
    Dataset,
    OutfitSpec,
    ScanCloud,
    WrinkleSpec,
    generate_dataset,
    generate_scan,
    jacket_spec,
    loose_spec,
    load_dataset,
    sample_poses,
    skirt_spec,
)
from .train import (
    EvalReport,
    TrainConfig,
    TrainResult,
    build_model,
    evaluate,
    export_cloud,
    export_template,
    template_alignment,
    train,
    wrinkle_to_template_ratio,
)
from .uvgrid import UVAtlas, humanoid_atlas, seam_study, uv_baseline_features

__all__ = [
    "LocalFrame",
    "PointCloud",
    "Skeleton",
    "SurfacePoint",
    "TemplateBody",
    "chamfer",
    "farthest_point_sample",
    "local_frame",
    "sample_surface",
    "vertex_normals",
    "HumanoidConfig",
    "Pose",
    "PosedBody",
    "build_humanoid",
    "lbs_pose",
    "LossReport",
    "LossWeights",
    "total_loss",
    "ClothModel",
    "ModelConfig",
    "Dataset",
    "OutfitSpec",
    "ScanCloud",
    "WrinkleSpec",
    "generate_dataset",
    "generate_scan",
    "jacket_spec",
    "loose_spec",
    "load_dataset",
    "sample_poses",
    "skirt_spec",
    "EvalReport",
    "TrainConfig",
    "TrainResult",
    "build_model",
    "evaluate",
    "export_cloud",
    "export_template",
    "template_alignment",
    "train",
    "wrinkle_to_template_ratio",
    "UVAtlas",
    "humanoid_atlas",
    "seam_study",
    "uv_baseline_features",
]
