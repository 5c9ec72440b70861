"""Lightweight pyramid-based semantic segmentation with a self-contained
differentiable operator set."""

from .errors import (ConfigError, ContractError, DataError, DimensionError,
                     LabelError, LemmaError, NumericError, ShapeError,
                     TrainingError, UndefinedMetricError)
from .losses import LossConfig
from .model import LemmaConfig, LemmaModel, build, count_flops, count_params, forward
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor", "LemmaConfig", "LemmaModel", "LossConfig",
    "build", "forward", "count_params", "count_flops",
    "LemmaError", "ShapeError", "DimensionError", "ContractError",
    "NumericError", "LabelError", "ConfigError", "TrainingError",
    "UndefinedMetricError", "DataError",
]
