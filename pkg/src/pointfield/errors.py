"""Exception types shared across the package."""

from __future__ import annotations


class PointFieldError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PointFieldError, ValueError):
    """Invalid or incomplete configuration."""


class ResolutionError(PointFieldError, ValueError):
    """The momentum grid cannot resolve the requested multi-index."""


class ResourceError(PointFieldError, MemoryError):
    """A size guard refused to build an object."""


class GridMismatchError(PointFieldError, ValueError):
    """Objects built on different grids or bases were combined."""


class HeadroomError(PointFieldError, ValueError):
    """The particle cap is too small for the requested construction."""


class RankDeficiencyError(PointFieldError, ValueError):
    """A linear system did not separate its candidate space."""


class FitError(PointFieldError, ValueError):
    """A log-log fit was requested on unusable samples."""


class MembershipError(PointFieldError, ValueError):
    """A form does not lie in the space it was claimed to lie in."""


class GapError(PointFieldError):
    """Exponent clusters are not separated by the required margin.

    ``clusters`` holds (low, high, size) rows of the cluster table.
    """

    def __init__(self, message: str, clusters=None):
        super().__init__(message)
        self.clusters = list(clusters or [])
