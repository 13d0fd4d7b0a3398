"""Exception types shared across the package."""


class ContjumpError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(ContjumpError, ValueError):
    """A numeric parameter is out of its admissible range."""


class GeometryError(ContjumpError, ValueError):
    """Torus too small for the interaction range of a kernel."""


class MembershipError(ContjumpError, KeyError):
    """A point was required to belong to a configuration but does not."""


class NotDifferentiableError(ContjumpError, TypeError):
    """An operation needs profile derivatives that the profile lacks."""


class UnsupportedObservableError(ContjumpError, TypeError):
    """An operation does not support this observable type."""


class SizeBudgetError(ContjumpError, ValueError):
    """A requested discretization exceeds the enforced dimension budget."""


class ConfigError(ContjumpError, ValueError):
    """Run-configuration file is missing, malformed, or out of range."""
