"""Exception types raised across the package."""


class DeconflictError(Exception):
    """Base class for all package errors."""


class InitialLoss(DeconflictError, ValueError):
    """A pair of aircraft is already closer than the separation norm."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        super().__init__(message)
        self.pair = pair


class InvalidGamma(DeconflictError, ValueError):
    pass


class DegenerateDelta(DeconflictError, ValueError):
    pass


class SchemaError(DeconflictError, ValueError):
    """Malformed instance or solution file; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class GenerationExhausted(DeconflictError, RuntimeError):
    pass


class ResourceCap(DeconflictError, RuntimeError):
    pass


class ShapeMismatch(DeconflictError, ValueError):
    pass


class NumericalFailure(DeconflictError, RuntimeError):
    pass


class UnauditedResult(DeconflictError, ValueError):
    """A solution was handed to the plotter without a passing audit."""
