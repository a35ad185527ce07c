"""No-reference video quality assessment with mixed-dataset training."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateDataError,
    FormatError,
    MissingAlignmentError,
    NumericError,
    ShapeError,
    ValidationError,
    VqalignError,
)

__all__ = [
    "ConfigError",
    "DegenerateDataError",
    "FormatError",
    "MissingAlignmentError",
    "NumericError",
    "ShapeError",
    "ValidationError",
    "VqalignError",
    "__version__",
]
