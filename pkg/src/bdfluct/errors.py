"""Exception hierarchy shared by all modules."""


class BDError(Exception):
    """Base class for every error raised by bdfluct."""


class DimensionError(BDError, ValueError):
    """Array lengths do not match the truncation size."""


class DomainError(BDError, ValueError):
    """Input lies outside the domain of an operator (negative flux, bad rate, ...)."""


class ConfigError(BDError, ValueError):
    """Invalid experiment configuration."""


class NoFixedPointError(BDError):
    """The truncated mass function never reaches 1 below its radius."""


class InfeasibleProfileError(BDError, ValueError):
    """Rounding a concentration profile leaves a negative monomer count."""


class NumericalError(BDError, ArithmeticError):
    """A numerical procedure lost accuracy beyond its tolerance."""


class StiffnessError(NumericalError):
    """Adaptive step size underflowed."""


class InstabilityError(NumericalError):
    """Linearised dynamics are not attracting on the mass-null subspace."""


class InvariantViolation(BDError, AssertionError):
    """An internal invariant (mass, nonnegativity) was broken. Always a bug."""
