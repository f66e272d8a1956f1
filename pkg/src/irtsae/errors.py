"""Exception types raised across the package.

Validation problems derive from ``ValueError`` so that callers which only
care about "bad input" can catch that, while numerical breakdowns derive
from ``ArithmeticError``.
"""


class ValidationError(ValueError):
    """Input data violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A numerical procedure could not produce a usable answer."""


class DegenerateItem(ValidationError):
    """An item has no observed variation (all 0 or all 1)."""

    def __init__(self, item, message=None):
        self.item = item
        super().__init__(message or f"item {item!r} has no observed variation in its responses")


class EmptyDomain(ValidationError):
    pass


class SingletonDomain(ValidationError):
    pass


class TooFewImputations(ValidationError):
    pass


class SingularDesign(NumericalError):
    pass


class RankError(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class SingularAux(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class MethodMismatch(ValidationError):
    pass


class ZeroEstimate(ValidationError):
    pass


class CorrelationMiss(NumericalError):
    pass


class ConvergenceWarning(UserWarning):
    """EM stopped at its iteration cap; the returned iterate is the best seen."""
