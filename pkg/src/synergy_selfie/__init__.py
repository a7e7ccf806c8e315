"""Selfie classification from synergy-constrained convolutional features.

Hand-crafted HOG and LBP descriptors are fused by canonical correlation into
a per-image "synergy" vector; a small CNN is trained to regress it, and
keypoint-pooled CNN activations feed a linear SVM.
"""
from .config import PipelineConfig, load_config, parse_config
from .errors import (ConfigError, DecodeError, DivergedError, MissingArtifactError,
                     SingularCovarianceError, SynergyError)
from .pipeline import Pipeline

__all__ = [
    "ConfigError", "DecodeError", "DivergedError", "MissingArtifactError", "Pipeline",
    "PipelineConfig", "SingularCovarianceError", "SynergyError", "load_config", "parse_config",
]
__version__ = "0.1.0"
