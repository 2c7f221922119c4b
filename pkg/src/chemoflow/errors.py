"""Exception types shared across the package."""


class GridMismatchError(ValueError):
    """Two fields living on different grids were combined."""


class ParameterError(ValueError):
    """A physical or numerical parameter is out of its admissible range."""


class SolverFailure(RuntimeError):
    """An iterative linear solve did not reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FixedPointFailure(RuntimeError):
    """The per-step fixed-point loop hit its iteration cap."""

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)
