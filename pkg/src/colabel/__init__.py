"""colabel: detector-agnostic self-labeling for 2D object detection datasets.

The package wraps any trainable detector behind a small train/predict
contract and grows a pseudo-labeled dataset around it, either by
self-training (one detector teaching itself) or by co-training (two
detectors trained on different views exchanging the labels they disagree
on). Progress is measured without ground truth by comparing consecutive
generations of pseudo-labels with a mAP-based similarity score.
"""

from colabel.backends import (
    BackendError,
    ConfigurationError,
    DetectorBackend,
    ExternalDetectorBackend,
    ModelHandle,
    TrainRequest,
)
from colabel.engine import (
    CheckpointError,
    CycleState,
    ExchangeLabelPolicy,
    RunResult,
    SelfLabelingConfig,
    load_checkpoint,
    run_co_training,
    run_self_training,
    should_stop,
    train_final,
)
from colabel.estimators import CoTrainingLabeler, SelfTrainingLabeler
from colabel.evaluation import ApMode, ApReport, evaluate, map_similarity, match_detections
from colabel.selection import fuse, rand_select, select_extreme
from colabel.types import (
    AnnotationKind,
    AnnotationSet,
    BoundingBox,
    ClassEntry,
    ClassTable,
    Detection,
    DomainTag,
    ImageRecord,
    SelectionDirection,
    SelectionParams,
    SequenceParams,
    StopParams,
    TrainingHyper,
    ViewTransform,
    mirror_annotations,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationKind",
    "AnnotationSet",
    "ApMode",
    "ApReport",
    "BackendError",
    "BoundingBox",
    "CheckpointError",
    "ClassEntry",
    "ClassTable",
    "ConfigurationError",
    "CoTrainingLabeler",
    "CycleState",
    "Detection",
    "DetectorBackend",
    "DomainTag",
    "ExchangeLabelPolicy",
    "ExternalDetectorBackend",
    "ImageRecord",
    "ModelHandle",
    "RunResult",
    "SelectionDirection",
    "SelectionParams",
    "SelfLabelingConfig",
    "SelfTrainingLabeler",
    "SequenceParams",
    "StopParams",
    "TrainRequest",
    "TrainingHyper",
    "ViewTransform",
    "evaluate",
    "fuse",
    "load_checkpoint",
    "map_similarity",
    "match_detections",
    "mirror_annotations",
    "rand_select",
    "run_co_training",
    "run_self_training",
    "select_extreme",
    "should_stop",
    "train_final",
    "__version__",
]
