"""
VecEdit exceptions

Every error raised on purpose by the services derives from ``VecEditError``,
which is itself a ``ValueError`` so callers that already guard service calls
with ``except ValueError`` keep working.
"""


class VecEditError(ValueError):
    """Base class for all data / validation errors."""


class ConfigError(VecEditError):
    """Invalid model or pipeline configuration."""


class ShapeError(VecEditError):
    """Operand shapes do not agree."""


class WeightFormatError(VecEditError):
    """Malformed S2E1 weight file."""


class BadMagicError(WeightFormatError):
    """File does not start with the S2E1 magic bytes."""


class TruncatedTensorError(WeightFormatError):
    """File ends before a tensor is complete."""

    def __init__(self, tensor_name: str, expected: int, available: int):
        self.tensor_name = tensor_name
        super().__init__(
            f"truncated tensor '{tensor_name}': expected {expected} bytes, {available} available"
        )


class ShapeMismatchError(WeightFormatError):
    """Tensor payload does not match the embedded config."""


class TokenError(VecEditError):
    """Out-of-range token id or over-length sequence."""


class DatasetError(VecEditError):
    """Probe dataset violates its invariants."""


class DegenerateSampleError(VecEditError):
    """Zero-variance sample where a correlation is required."""

    def __init__(self, message: str = "degenerate sample"):
        super().__init__(message)


class DegenerateSteeringVectorError(VecEditError):
    """Steering vector with zero norm."""

    def __init__(self, message: str = "degenerate steering vector"):
        super().__init__(message)


class InsensitiveComponentError(VecEditError):
    """W^T v = 0: the component cannot respond along the steering direction."""

    def __init__(self, message: str = "component insensitive to direction"):
        super().__init__(message)


class ParameterError(VecEditError):
    """Hyperparameter outside its admissible range."""


class ConvergenceError(VecEditError):
    """Iterative method did not converge."""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"power iteration did not converge after {iterations} iterations (residual {residual:.3e})"
        )


class TraceCoverageError(VecEditError):
    """Activation trace lacks the positions or components an operation needs."""
