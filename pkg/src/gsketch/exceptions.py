"""Exception and warning classes raised by gsketch."""


class GSketchError(Exception):
    """Base class for all gsketch errors."""


class ConfigError(GSketchError, ValueError):
    """Invalid parameters, domains or file contents."""


class NumericalError(GSketchError, ArithmeticError):
    """A computation is numerically ill-posed (indefinite covariance, singular Gram, ...)."""


class ContinuityWarning(UserWarning):
    """The Mercer series of a weighted Jacobi kernel may not converge uniformly."""
