"""Exception hierarchy shared by every pathwise module."""


class PathwiseError(Exception):
    """Base class for all errors raised by pathwise."""


class DimensionError(PathwiseError, ValueError):
    pass


class InvalidInstanceError(PathwiseError, ValueError):
    pass


class InvalidBoundError(PathwiseError, ValueError):
    pass


class InfeasiblePPError(PathwiseError):
    """No candidate reached the margin after every c-search round."""

    def __init__(self, message: str, best_margin: float, c_used: float):
        super().__init__(message)
        self.best_margin = best_margin
        self.c_used = c_used


class VacuousInstanceError(PathwiseError):
    """The input itself does not meet the margin, so any path would be empty."""


class InternalConsistencyError(PathwiseError):
    """A path produced by the engine failed its own validation."""


class MaskInfeasibleError(PathwiseError):
    pass


class NumericError(PathwiseError, FloatingPointError):
    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class UnsupportedGradientError(PathwiseError, TypeError):
    pass


class ProtocolError(PathwiseError):
    pass


class ProtocolTimeoutError(ProtocolError, TimeoutError):
    pass


class ProcessError(ProtocolError):
    def __init__(self, message: str, returncode: int | None = None):
        super().__init__(message)
        self.returncode = returncode


class IngestionError(PathwiseError, ValueError):
    pass


class ParseError(PathwiseError, ValueError):
    pass
