"""Exception hierarchy shared by all sa_lab modules."""


class SaLabError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SaLabError, ValueError):
    """An argument is outside its documented domain."""


class InvalidModelError(InvalidInputError):
    """A model object (chain, MDP, features, policy) fails validation."""


class PreconditionError(SaLabError):
    """A documented precondition of an operation does not hold."""


class NumericError(SaLabError, RuntimeError):
    """A numeric procedure failed to converge or produced non-finite values."""


class DegenerateFitError(NumericError):
    """Geometric-decay fit attempted on data that is numerically zero."""


class NoConvergenceError(NumericError):
    """Fixed-point iteration exceeded its iteration or norm budget."""


class NotPositiveDefiniteError(InvalidInputError):
    """A matrix required to be symmetric positive definite is not."""


class PremiseViolationError(InvalidInputError):
    """A closed-form bound was evaluated outside its stated premise.

    Carries both sides of the violated inequality so callers can report
    how far off the configuration is.
    """

    def __init__(self, message: str, lhs: float, rhs: float):
        super().__init__(f"{message} (lhs={lhs!r}, rhs={rhs!r})")
        self.lhs = lhs
        self.rhs = rhs


class EnumerationCapError(SaLabError):
    """Deterministic-policy enumeration would exceed the configured cap."""
