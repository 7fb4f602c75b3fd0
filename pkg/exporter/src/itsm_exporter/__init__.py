"""Feature exporter for the itsmlab interchange format."""

from .errors import DatasetResolutionError, ExporterError, InvalidTensor, ModelResolutionError
from .export import PROMPT, ExportJob, export_dataset
from .ften import write_tensor
from .models import (
    MODELS,
    Clip,
    ModelSpec,
    TextConfig,
    VisionConfig,
    VisionTower,
    build_clip,
    build_vision,
    dino_to_native,
    encode_text_bank,
    load_clip_checkpoint,
    load_vision_checkpoint,
    resolve_spec,
    tokenize,
)
from .preprocess import to_model_input
from .voc import CLASSES, VocItem, walk

__version__ = "0.1.0"

__all__ = [
    "CLASSES",
    "Clip",
    "DatasetResolutionError",
    "ExportJob",
    "ExporterError",
    "InvalidTensor",
    "MODELS",
    "ModelResolutionError",
    "ModelSpec",
    "PROMPT",
    "TextConfig",
    "VisionConfig",
    "VisionTower",
    "VocItem",
    "build_clip",
    "build_vision",
    "dino_to_native",
    "encode_text_bank",
    "export_dataset",
    "load_clip_checkpoint",
    "load_vision_checkpoint",
    "resolve_spec",
    "to_model_input",
    "tokenize",
    "walk",
    "write_tensor",
]
