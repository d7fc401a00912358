"""
Error hierarchy for the side_fd solver library.
Every failure raised by the package derives from SideFdError.
"""


class SideFdError(Exception):
    """Base class for all solver and study errors."""


class GridMismatchError(SideFdError):
    """Operands live on grids with different spacing or extent."""


class NonIntegrableError(SideFdError):
    """A measure integral diverges at the origin."""


class QuadratureFailureError(SideFdError):
    """Adaptive quadrature did not reach the requested tolerance."""


class UnknownCellError(SideFdError):
    """No segment partition is stored for the requested cell."""


class InvalidParamsError(SideFdError):
    """Parameters violate a documented precondition."""


class ResolutionMismatchError(SideFdError):
    """A time step is not an integer multiple of the noise resolution."""


class IndivisibleFactorError(SideFdError):
    """A coarsening factor does not divide the number of steps."""


class CflViolationError(SideFdError):
    """The explicit scheme's tau/h^2 bound is not satisfied."""


class DeltaTooLargeError(SideFdError):
    """The small-jump moment exceeds the coercivity constant."""


class SingularMatrixError(SideFdError):
    """The implicit step matrix could not be factorized or solved."""


class TimeNotOnGridError(SideFdError):
    """A time is not a multiple of the noise time step."""


class ParabolicityError(SideFdError):
    """Coefficients violate 2a - sigma^2 >= kappa > 0."""


class ConfigError(SideFdError):
    """Configuration file or command-line flags are invalid."""


class StudyIoError(SideFdError):
    """Study outputs could not be written."""
