"""Exception types raised by the filters and kernels.

Every numerical failure derives from :class:`FilterBreakdown` so that run
loops can capture them uniformly and record the step at which a filter
stopped working.
"""

from __future__ import annotations


class FilterBreakdown(ArithmeticError):
    """Base class for numerical failures that terminate a filter run."""


class NotPositiveDefinite(FilterBreakdown):
    """A Cholesky pivot was not strictly positive."""


class NonFiniteInput(FilterBreakdown, ValueError):
    """An input array contained NaN or infinite entries."""


class NonFiniteOutput(FilterBreakdown):
    """A model function or propagation step produced NaN or infinite values."""


class SingularResidualCovariance(FilterBreakdown):
    """The residual covariance could not be inverted in working precision."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
