"""
Exception hierarchy for flowrecon
"""
from typing import Optional, Sequence


class FlowReconError(Exception):
    """Base class for all flowrecon errors"""


class ShapeError(FlowReconError, ValueError):
    """Raised when tensor extents do not fit a primitive or a layer"""

    def __init__(self, where: str, detail: str):
        self.where = where
        self.detail = detail
        super().__init__(f"{where}: {detail}")


class TapeConsumedError(FlowReconError, RuntimeError):
    """Raised when backward is called twice on the same tape"""


class NumericalError(FlowReconError, ArithmeticError):
    """Raised when a computation produces NaN or Inf"""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        self.layer_index = layer_index
        if layer_index is not None:
            message = f"{message} (layer {layer_index})"
        super().__init__(message)


class ConvergenceError(FlowReconError, RuntimeError):
    """Raised when an iterative solver stops before reaching its tolerance"""

    def __init__(self, solver: str, residual: float, iterations: int):
        self.solver = solver
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"{solver} did not converge after {iterations} iterations "
            f"(relative residual {residual:.3e})"
        )


class ConfigError(FlowReconError, ValueError):
    """Raised for invalid experiment configuration"""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class MeasurementMismatchError(FlowReconError, ValueError):
    """Raised when measurements do not match the operator that should consume them"""

    def __init__(self, expected: Sequence[int], actual: Sequence[int]):
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(
            f"measurement shape {self.actual} does not match operator shape {self.expected}"
        )


class CheckpointError(FlowReconError, IOError):
    """Raised when a checkpoint archive is missing, corrupt or incompatible"""
