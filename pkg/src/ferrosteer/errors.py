"""Exception hierarchy shared by every ferrosteer module."""

from __future__ import annotations


class FerroSteerError(Exception):
    """Base class for all package errors."""


class ConfigError(FerroSteerError, ValueError):
    """Invalid or unknown configuration content."""


class SaturationError(FerroSteerError):
    """An actuator command lies outside its physical range."""


class SingularityError(FerroSteerError):
    """A field or force was requested inside a magnet's exclusion radius."""


class NoAuthorityError(FerroSteerError):
    """The active setup cannot produce any force (e.g. zero coil field)."""


class AllocationSingularError(FerroSteerError):
    """The two-marble allocation matrix is rank deficient or ill-conditioned."""


class IntegrationDivergedError(FerroSteerError):
    """The plant state became non-finite."""


class ScenarioFailed(FerroSteerError):
    """A closed-loop scenario aborted; carries whatever was recorded so far."""

    def __init__(self, message: str, trace=None, metrics=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
        self.metrics = metrics
