"""Detector backends and the contract layer that mediates access to them."""

from colabel.backends.base import (
    BackendError,
    ConfigurationError,
    DetectorBackend,
    ModelHandle,
    TrainRequest,
    predict,
    train,
)
from colabel.backends.external import ExternalDetectorBackend

__all__ = [
    "BackendError",
    "ConfigurationError",
    "DetectorBackend",
    "ExternalDetectorBackend",
    "ModelHandle",
    "TrainRequest",
    "predict",
    "train",
]
