"""Exception types shared across the package."""


class BarrageError(Exception):
    """Base class for package-specific failures."""


class NumericalError(BarrageError):
    """A computation produced a non-finite or inconsistent result."""


class ConvergenceError(BarrageError):
    """An iterative procedure exhausted its budget without converging.

    Carries the last observed residuals so callers can report how far the
    iteration was from the requested tolerance.
    """

    def __init__(self, message, residuals=None, frame=None):
        super().__init__(message)
        self.residuals = residuals
        self.frame = frame


class StateSpaceCapError(BarrageError):
    """The reachable chain state count exceeded the configured cap."""
