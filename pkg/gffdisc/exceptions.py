"""
Error types raised by the gffdisc library.

Validation-type errors (bad geometry, bad arguments, parameters out of range) map
to CLI exit code 2; numerical and estimation failures map to exit code 3.
"""


class GffdiscError(Exception):
    """Base class for every error raised by gffdisc."""

    exit_code = 3


class ValidationFailure(GffdiscError):
    """Base for errors caused by invalid input rather than by a failed computation."""

    exit_code = 2


class GeometryError(ValidationFailure, ValueError):
    """A geometric precondition does not hold (MN < N+1, window too small, ...)."""


class DenseLimitError(GeometryError):
    """Dense sampling was requested for a window larger than the dense limit."""

    def __init__(self, size, limit):
        self.size = size
        self.limit = limit
        super().__init__(
            f'window has {size} sites, dense limit is {limit}; '
            f'use sample_embedded for larger windows'
        )


class UnsupportedDimensionError(ValidationFailure, ValueError):
    """The walk is recurrent below d = 3, so g is infinite."""

    def __init__(self, d):
        self.d = d
        super().__init__(f'dimension d={d} is not supported (need d >= 3)')


class InvalidArgumentError(ValidationFailure, ValueError):
    """An argument is outside its allowed range."""


class InvalidConfigurationError(ValidationFailure, ValueError):
    """A coarse-graining or Z-field configuration is inconsistent."""


class RateDomainError(ValidationFailure, ValueError):
    """Rate-function parameters lie outside the regime of the formula."""


class CapacityRangeError(ValidationFailure):
    """The requested box is too large for the configured solver limits."""

    def __init__(self, requested, largest_supported):
        self.requested = requested
        self.largest_supported = largest_supported
        super().__init__(
            f'box radius N={requested} exceeds solver limits; '
            f'largest supported N is {largest_supported}'
        )


class EstimationError(GffdiscError):
    """A Monte Carlo estimate is degenerate for the quantity asked of it."""


class IllConditionedError(GffdiscError, ArithmeticError):
    """A Green matrix failed to factorize; points to a Green-table accuracy fault."""
