"""Two-person reactive motion toolkit.

Preprocessing of estimated keypoint tracks, three Transformer-family
counterpart predictors, closed-loop generation, drift metrics, file formats
and the RMX1 streaming protocol.
"""

from __future__ import annotations

from .errors import DivergenceError, IOFormatError, ReactMotionError, ValidationError
from .models import Arch, ModelConfig, build_model
from .skeleton import MotionClip, PairedClip, PoseFrame, SkeletonTopology, default_topology

__version__ = "0.1.0"

__all__ = [
    "Arch",
    "DivergenceError",
    "IOFormatError",
    "ModelConfig",
    "MotionClip",
    "PairedClip",
    "PoseFrame",
    "ReactMotionError",
    "SkeletonTopology",
    "ValidationError",
    "build_model",
    "default_topology",
]
