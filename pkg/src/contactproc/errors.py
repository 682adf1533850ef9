"""Exception types. The CLI maps these onto exit codes."""


class ContactProcessError(Exception):
    pass


class UsageError(ContactProcessError, ValueError):
    """Invalid input: bad site, malformed kernel, violated precondition."""


class CapacityError(UsageError):
    """Request exceeds a size limit (e.g. too many sites to enumerate)."""


class IllPosedError(UsageError):
    """Mathematically ill-posed request, e.g. a resolvent at or below r."""


class NumericalError(ContactProcessError, RuntimeError):
    """An iterative method failed to converge or a check failed."""

    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")
        self.residual = residual


class EstimationError(NumericalError):
    """A Monte Carlo estimator had no usable data."""
