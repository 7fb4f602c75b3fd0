"""Image-text similarity map toolkit.

Builds per-class similarity heatmaps from frozen vision-language features,
offers a training-free map reversal and a trainable projection pair over
masked-max-pooled tokens, and ships the metrics (grid-search mIoU, mean
score contrast, mAP) plus a pooling shift diagnostic to evaluate them.
"""

from .errors import ItsmlabError, NumericError, ValidationError
from .itsm import (
    Itsm,
    bilinear_resize,
    confidence_scores,
    finalize_itsm,
    itsm_raw,
    minmax_normalize_slices,
    rclip_reverse,
)
from .metrics import (
    MetricsReport,
    best_threshold_iou,
    build_report,
    mean_ap,
    miou,
    msc,
    score_contrast,
    score_sample,
)
from .pooling import AttentionMask, PooledToken, avg_pool, masked_max_pool, max_pool, prepare_attention
from .shift import PointMap, ShiftReport, aggregate_shift, classify_shift, downsample_majority, point_map
from .tensor_io import (
    Manifest,
    SampleRecord,
    TextBank,
    load_manifest,
    read_mask,
    read_tensor,
    write_tensor,
)
from .training import (
    Batch,
    Gradients,
    ProjectionPair,
    TrainConfig,
    adamw_step,
    contrastive_loss,
    load_checkpoint,
    loss_gradients,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionMask",
    "Batch",
    "Gradients",
    "Itsm",
    "ItsmlabError",
    "Manifest",
    "MetricsReport",
    "NumericError",
    "PointMap",
    "PooledToken",
    "ProjectionPair",
    "SampleRecord",
    "ShiftReport",
    "TextBank",
    "TrainConfig",
    "ValidationError",
    "adamw_step",
    "aggregate_shift",
    "avg_pool",
    "best_threshold_iou",
    "bilinear_resize",
    "build_report",
    "classify_shift",
    "confidence_scores",
    "contrastive_loss",
    "downsample_majority",
    "finalize_itsm",
    "itsm_raw",
    "load_checkpoint",
    "load_manifest",
    "loss_gradients",
    "masked_max_pool",
    "max_pool",
    "mean_ap",
    "minmax_normalize_slices",
    "miou",
    "msc",
    "point_map",
    "prepare_attention",
    "rclip_reverse",
    "read_mask",
    "read_tensor",
    "save_checkpoint",
    "score_contrast",
    "score_sample",
    "train",
    "write_tensor",
    "__version__",
]
