"""Spike-wave discharge segmentation in single-channel EEG with a residual 1D U-Net."""

from .augment import AugmentConfig
from .model import ModelParams, UNetConfig
from .signal_io import EventSet, Recording
from .synth import SynthConfig
from .training import RunResult, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "EventSet",
    "ModelParams",
    "Recording",
    "RunResult",
    "SynthConfig",
    "TrainConfig",
    "UNetConfig",
    "__version__",
]
