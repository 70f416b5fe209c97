"""Exception hierarchy shared across the package."""


class FutilityError(Exception):
    """Base class for all package errors."""


class NumericalError(FutilityError):
    """Numerical failure (maps to CLI exit code 3)."""


class NotPositiveDefinite(NumericalError):
    pass


class DimensionTooLarge(NumericalError):
    pass


class FlatShape(NumericalError):
    pass


class DegenerateContrast(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class NoInformationRemaining(NumericalError):
    pass


class SingularDesign(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class FracUnreachable(FutilityError):
    pass


class Unachievable(NumericalError):
    pass


class ConfigError(FutilityError):
    """Invalid configuration (maps to CLI exit code 2)."""
