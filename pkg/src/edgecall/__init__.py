"""A numpy inference engine for k-blueprint-separable 1-D CNN base callers."""

from .config import ModelConfig, load_config
from .estimator import Basecaller, SignalNormalizer

__version__ = "0.1.0"
__all__ = ["Basecaller", "ModelConfig", "SignalNormalizer", "load_config"]
