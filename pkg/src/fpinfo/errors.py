"""Exception hierarchy shared by all fpinfo modules.

The CLI maps these onto exit codes: ConfigError -> 2, SolverError -> 3,
everything else derived from FpinfoError -> 4.
"""


class FpinfoError(Exception):
    """Base class for all fpinfo errors."""


class ConfigError(FpinfoError):
    """Malformed or inconsistent experiment configuration."""


class DomainError(FpinfoError):
    """A point lies outside the grid box."""


class UnderflowError(FpinfoError):
    """A normalization constant underflowed to an unusable value."""


class SolverError(FpinfoError):
    """The deterministic solver failed (linear solve, positivity, ...)."""


class PositivityError(SolverError):
    """A density developed negative values beyond round-off."""


class PreconditionError(FpinfoError):
    """A documented precondition of an operation was violated."""


class ResolutionError(FpinfoError):
    """The grid does not resolve the density well enough for the request."""


class SupportError(FpinfoError):
    """Reference density vanishes where the argument carries mass."""


class NumericError(FpinfoError):
    """Overflow or non-finite values in a stochastic estimate."""


class FunctionalError(FpinfoError):
    """Internal consistency check of a functional failed."""
