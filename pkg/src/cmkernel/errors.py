"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Bad shapes, dimensions or parameter values."""


class StepFailure(RuntimeError):
    """Newton iteration of an implicit Euler step did not converge."""

    def __init__(self, message, iterate=None, residual=float("nan"), step_index=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual
        self.step_index = step_index


class NumericalFailure(RuntimeError):
    """Non-finite kernel values or a power function that went clearly negative."""


class FitFailure(RuntimeError):
    def __init__(self, message, condition=float("nan")):
        super().__init__(message)
        self.condition = condition


class OracleFailure(RuntimeError):
    """The Taylor coefficient-matching system is singular at some degree."""

    def __init__(self, message, degree=None):
        super().__init__(message)
        self.degree = degree
