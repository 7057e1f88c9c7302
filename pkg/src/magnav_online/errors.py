"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inputs are inconsistent with the declared model or run configuration."""


class NumericalDegeneracyError(ArithmeticError):
    """A quantity that must be strictly positive (or invertible) is not."""


class IllConditionedError(NumericalDegeneracyError):
    """A least-squares system is rank deficient; a ridge term is needed."""


class DomainError(ValueError):
    """A query falls outside the domain of a gridded field."""
