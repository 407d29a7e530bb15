"""Exception and warning types shared across the package."""


class DeconvolveError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(DeconvolveError, ValueError):
    """Inputs violate a documented precondition."""


class KernelOverflowError(DeconvolveError, ArithmeticError):
    """The deconvoluting kernel integrand would overflow double precision.

    Attributes
    ----------
    min_bandwidth : float
        Smallest bandwidth for which the integrand stays representable.
    """

    def __init__(self, message, min_bandwidth):
        super().__init__(message)
        self.min_bandwidth = min_bandwidth


class IllConditionedError(DeconvolveError, ArithmeticError):
    """The quadratic extrapolation design is numerically singular."""


class PlanValidationError(InvalidInputError):
    """An experiment plan violates one or more invariants.

    ``problems`` lists every violation, not just the first one found.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid plan: " + "; ".join(self.problems))


class ExperimentFailedError(DeconvolveError):
    """Too many replicates of an experiment had to be excluded."""


class BoundaryWarning(UserWarning):
    """A bounded search ended on one of its bounds."""


class SupportTruncationWarning(UserWarning):
    """An integration grid cuts off non-negligible density mass."""
