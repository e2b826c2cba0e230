"""Exception types raised by the solver stack."""


class FracDiffusionError(Exception):
    """Base class for all package errors."""


class CertificationError(FracDiffusionError):
    """A sum-of-exponentials fit could not be certified to the requested tolerance."""


class QuadratureError(FracDiffusionError):
    """Adaptive quadrature did not reach the requested accuracy."""


class SingularPreconditionerError(FracDiffusionError):
    """A preconditioner factorization hit a (near-)zero pivot or eigenvalue.

    ``index`` is the offending spectral mode or pivot row.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class LinearSolveError(FracDiffusionError):
    """The linear system of a time level could not be solved."""

    def __init__(self, message, level=None, result=None):
        super().__init__(message)
        self.level = level
        self.result = result


class ConfigError(FracDiffusionError):
    """Invalid experiment configuration."""
