"""Framework-free CNN training and attention maps for binary histopathology tasks."""

from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    FormatError,
    NumericError,
    ParameterError,
)
from .tensor import Tensor, backward, grad_of

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "FormatError",
    "NumericError",
    "ParameterError",
    "Tensor",
    "backward",
    "grad_of",
]
