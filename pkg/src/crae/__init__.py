"""Semi-supervised learning by conditional rotation angle estimation (CRAE / CRAE+)."""

from .methods import Method, TrainConfig, train
from .model import ModelConfig

__all__ = ["Method", "ModelConfig", "TrainConfig", "train"]
__version__ = "0.1.0"
