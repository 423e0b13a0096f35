"""Exception types raised across the package."""


class DimensionError(ValueError):
    """An array argument has the wrong shape."""


class ConfigError(ValueError):
    """A configuration document is invalid.

    ``path`` is a JSON pointer to the offending node.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path or "/"
        self.detail = message


class NumericalError(ArithmeticError):
    """Base class for numerical failures inside the solvers."""


class RegularizationError(NumericalError):
    """The regularized control Hessian was not positive definite."""

    def __init__(self, t, message=None):
        super().__init__(message or f"nu*I + B^T J B is not positive definite at t={t}")
        self.t = t


class SingularHessianError(NumericalError):
    """A cost Hessian is not positive definite where it must be."""

    def __init__(self, t, message=None):
        super().__init__(message or f"cost Hessian not positive definite at t={t}")
        self.t = t


class DivergenceError(NumericalError):
    """The iterates produced non-finite values."""


class LineSearchError(NumericalError):
    """The regularization line search exhausted its doubling budget."""


class PureQuadraticWarning(UserWarning):
    """All curvature constants vanish, so the schedule returns zero."""
