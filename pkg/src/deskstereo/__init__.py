"""Desk-scale iterative stereo matching with a monocular prior, on a small numpy autograd."""

from .config import Config, load_config
from .errors import ConfigError, ContractError, DataError, DimensionError, FormatError, StereoError, TrainingError
from .model import Prediction, StereoModel

__all__ = [
    "Config",
    "load_config",
    "StereoModel",
    "Prediction",
    "StereoError",
    "ContractError",
    "DimensionError",
    "DataError",
    "FormatError",
    "ConfigError",
    "TrainingError",
]

__version__ = "0.1.0"
