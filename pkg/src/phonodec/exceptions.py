class ValidationError(ValueError):
    """Bad inputs, shapes, or configuration. CLI exit code 1."""


class ShapeError(ValidationError):
    """Dimension disagreement between arrays or layers."""


class NumericError(RuntimeError):
    """Non-finite values or numeric failure during computation. CLI exit code 2."""
