"""Exception hierarchy shared across the package.

Everything numerical raises from this tree so the CLI can map failures to
stable exit codes (config 2, data 3, numerical 4).
"""


class AuctionRiskError(Exception):
    """Base class for all package errors."""


class DomainError(AuctionRiskError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class RangeError(AuctionRiskError, ValueError):
    """A query falls outside the representable range of a fitted object.

    Carries which bound was violated in ``.bound`` ("lower" or "upper").
    """

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class SingularDesignError(AuctionRiskError, ValueError):
    """Covariate design matrix is rank deficient."""


class ConvergenceError(AuctionRiskError, RuntimeError):
    """An iterative solver failed; carries the quantile level and last iterate."""

    def __init__(self, message, alpha=None, last_iterate=None):
        super().__init__(message)
        self.alpha = alpha
        self.last_iterate = last_iterate


class ConfigError(AuctionRiskError, ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class DataError(AuctionRiskError, ValueError):
    """Malformed or inadmissible input data (CLI exit code 3)."""
