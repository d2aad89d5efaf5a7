"""uoiskit: heatmap-prompted instance segmentation at desk scale.

A small, fully testable pipeline: synthetic cluttered scenes, a trainable
heatmap/foreground head that turns peaks into point prompts, a pluggable
hierarchical mask proposer, residual IoU-score refinement, post-processing,
and the standard overlap/boundary F-measure evaluation protocol.
"""

from .core import (
    BinaryMask,
    Centroid,
    ImageSize,
    PixelPoint,
    from_dense,
    mask_area,
    mask_centroid,
    mask_iou,
    rle_decode,
    rle_encode,
)
from .errors import (
    ConfigError,
    DatasetError,
    InvalidDimensions,
    NumericalError,
    UoiskitError,
)
from .synthgen import Scene, SceneConfig, generate_dataset, generate_scene
from .hpg import GaussianSpec, Keypoint, build_gt_heatmap, select_peaks
from .tinynn import Mlp, TrainConfig, init_mlp, load_mlp, mlp_forward, save_mlp
from .proposer import (
    MaskProposal,
    OracleConfig,
    OracleProposer,
    ReplayProposer,
    propose,
    true_slot_ious,
)
from .hdnet import RefinedProposal, build_training_set, refine_scores, train_hdnet
from .hpghead import predict_hpg, train_hpg_head
from .pipeline import Detection, PipelineConfig, infer_scene
from .metrics import (
    MetricsReport,
    evaluate_dataset,
    hungarian_match,
    pairwise_f,
    render_table,
)
from .config import RunConfig, load_config

__all__ = [
    "BinaryMask",
    "Centroid",
    "ConfigError",
    "DatasetError",
    "Detection",
    "GaussianSpec",
    "ImageSize",
    "InvalidDimensions",
    "Keypoint",
    "MaskProposal",
    "MetricsReport",
    "Mlp",
    "NumericalError",
    "OracleConfig",
    "OracleProposer",
    "PipelineConfig",
    "PixelPoint",
    "RefinedProposal",
    "ReplayProposer",
    "RunConfig",
    "Scene",
    "SceneConfig",
    "TrainConfig",
    "UoiskitError",
    "build_gt_heatmap",
    "build_training_set",
    "evaluate_dataset",
    "from_dense",
    "generate_dataset",
    "generate_scene",
    "hungarian_match",
    "infer_scene",
    "init_mlp",
    "load_config",
    "load_mlp",
    "mask_area",
    "mask_centroid",
    "mask_iou",
    "mlp_forward",
    "pairwise_f",
    "predict_hpg",
    "propose",
    "refine_scores",
    "render_table",
    "rle_decode",
    "rle_encode",
    "save_mlp",
    "select_peaks",
    "train_hdnet",
    "train_hpg_head",
    "true_slot_ious",
]

__version__ = "0.1.0"
