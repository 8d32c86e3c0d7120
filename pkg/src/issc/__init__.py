"""Image-segmentation semantic communication simulator.

A trainable windowed-attention encoder transmits compact semantic features
over a noisy channel; the decoder reconstructs segmentation maps. A classical
JPEG/PNG + LDPC + QAM pipeline serves as the digital baseline.
"""

from .config import (
    ChannelConfig,
    ConfigError,
    DataConfig,
    ExperimentConfig,
    ExperimentRecord,
    ModelConfig,
    TrainConfig,
    compression_ratio,
    derive_stage_shapes,
    load_config,
)
from .decoder import IsscModel, build_model

__all__ = [
    "ChannelConfig",
    "ConfigError",
    "DataConfig",
    "ExperimentConfig",
    "ExperimentRecord",
    "ModelConfig",
    "TrainConfig",
    "compression_ratio",
    "derive_stage_shapes",
    "load_config",
    "IsscModel",
    "build_model",
]

__version__ = "0.1.0"
