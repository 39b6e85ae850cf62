"""Exception hierarchy shared by all modules."""


class NetregError(Exception):
    """Base class for library errors."""


class DimensionError(NetregError, ValueError):
    """A vector or operator has the wrong shape."""


class BudgetExceeded(NetregError, ValueError):
    """A dense materialization would exceed the configured entry budget."""


class NumericalError(NetregError, ArithmeticError):
    """A numerical procedure produced non-finite values or broke down."""


class ConvergenceError(NumericalError):
    """An iterative method did not reach its tolerance.

    Attributes
    ----------
    last_iterate : ndarray or None
    residual : float
    iterations : int
    """

    def __init__(self, message, last_iterate=None, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.iterations = iterations


class ConfigError(NetregError, ValueError):
    """An experiment configuration is malformed."""


def check_dim(x, expected, what="input"):
    """Raise :class:`DimensionError` unless ``x.shape[-1] == expected``."""
    got = x.shape[-1] if x.ndim else 0
    if got != expected:
        raise DimensionError(f"{what} has length {got}, expected {expected}")
