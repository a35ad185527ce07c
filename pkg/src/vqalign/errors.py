"""Exception types shared across the package."""


class VqalignError(Exception):
    """Base class for all package errors."""


class ShapeError(VqalignError, ValueError):
    """Operand shapes are incompatible for an operation."""


class FormatError(VqalignError, ValueError):
    """A binary or text artifact does not conform to its documented format."""


class ValidationError(VqalignError, ValueError):
    """A manifest or dataset fails its declared invariants."""


class ConfigError(VqalignError, ValueError):
    """A run configuration is inconsistent or out of range."""


class NumericError(VqalignError, ArithmeticError):
    """A computation produced non-finite values or cannot proceed numerically."""


class DegenerateDataError(VqalignError, ValueError):
    """An input has zero spread where variation is required."""


class MissingAlignmentError(VqalignError, KeyError):
    """No perceptual-scale alignment is known for the requested dataset."""

    def __str__(self):
        # KeyError.__str__ repr-quotes its argument; keep the plain message.
        return self.args[0] if self.args else ""
