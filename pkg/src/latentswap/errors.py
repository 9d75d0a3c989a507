"""Exception types raised across the package."""


class LatentSwapError(Exception):
    """Base class for all package errors."""


class InvalidConfigurationError(LatentSwapError, ValueError):
    pass


class ShapeError(LatentSwapError, ValueError):
    pass


class InvalidArgumentError(LatentSwapError, ValueError):
    pass


class DegenerateEmbeddingError(LatentSwapError, ValueError):
    pass


class ContractViolationError(LatentSwapError, RuntimeError):
    pass


class PoisonedLossError(LatentSwapError, FloatingPointError):
    """A loss component evaluated to NaN or Inf."""

    def __init__(self, component, value=None):
        self.component = component
        super().__init__(f"loss component {component!r} is not finite ({value})")


class InsufficientSamplesError(LatentSwapError, ValueError):
    pass


class NumericalInstabilityError(LatentSwapError, ArithmeticError):
    pass


class CorruptCheckpointError(LatentSwapError, IOError):
    pass


class StageError(LatentSwapError, RuntimeError):
    """Wraps a failure inside the swap pipeline with the stage that raised it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
