"""Task-incremental continual learning via gated sub-network discovery:
a frozen backbone with frozen bottleneck adapters, per-task popup scores
trained through a straight-through estimator, importance-guided gradient
soft-masking for knowledge transfer, and bit-packed gate storage."""

from .model import GatedModel, ModelConfig, ScoreSet, build
from .trainer import TrainConfig, Variant, run_sequence

__all__ = [
    "GatedModel",
    "ModelConfig",
    "ScoreSet",
    "TrainConfig",
    "Variant",
    "build",
    "run_sequence",
]

__version__ = "0.1.0"
