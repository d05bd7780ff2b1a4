"""Semantic exception hierarchy shared across the package."""


class LatticeCltError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(LatticeCltError, ValueError):
    """Inputs violate a documented contract (domain, shape, emptiness)."""


class AnalyticUnavailableError(LatticeCltError):
    """A closed-form quantity was requested for a model that only supports
    Monte Carlo estimation."""


class CertificationError(LatticeCltError):
    """A certified bound was requested outside its validity regime
    (degenerate variance, failed finite-sample threshold)."""


class HeavyTailError(LatticeCltError):
    """A Monte Carlo moment estimate overflowed or is non-finite.

    Carries the innovation law's tail index when known, so callers can
    report why the requested moment does not exist.
    """

    def __init__(self, message: str, tail_index: float | None = None):
        super().__init__(message)
        self.tail_index = tail_index


class ConfigError(LatticeCltError):
    """An experiment configuration failed schema validation."""
