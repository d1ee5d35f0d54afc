"""Multi-head multiview annotation network: model, training, inference."""

from .model import (
    AdditiveAttention,
    AnnotatorConfig,
    AnnotatorNet,
    BackboneKind,
    BackboneSpec,
    DotAttention,
    HeadOutputs,
    ShapeMismatchError,
    TinyScratchBackbone,
    build_network,
)
from .training import (
    EpochStats,
    TrainedAnnotator,
    TrainingDivergedError,
    TrainingError,
    compute_loss,
    forward,
    load_annotator,
    predict,
    save_annotator,
    train,
)

__all__ = [
    "AdditiveAttention",
    "AnnotatorConfig",
    "AnnotatorNet",
    "BackboneKind",
    "BackboneSpec",
    "DotAttention",
    "HeadOutputs",
    "ShapeMismatchError",
    "TinyScratchBackbone",
    "build_network",
    "EpochStats",
    "TrainedAnnotator",
    "TrainingDivergedError",
    "TrainingError",
    "compute_loss",
    "forward",
    "load_annotator",
    "predict",
    "save_annotator",
    "train",
]
