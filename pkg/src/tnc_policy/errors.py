"""Exception hierarchy shared by the solver, calibration and CLI layers."""


class ModelError(Exception):
    """Base class for every error raised by this package."""


class DomainError(ModelError, ValueError):
    """An argument lies outside the domain of a model function."""


class InfeasibleFleetError(DomainError):
    """Traffic speed is non-positive for the requested fleet size."""


class WildGooseChaseError(DomainError):
    """No idle vehicles remain (N - lambda * t0 <= 0)."""


class CalibrationError(ModelError):
    """The reverse-engineering of the logit parameters failed."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


class ThresholdNotFound(ModelError):
    """A regime threshold does not exist inside the searched range."""


class RevenueRangeError(ModelError):
    """A revenue target lies outside what a charge scheme can raise."""

    def __init__(self, message, max_achievable=None):
        super().__init__(message)
        self.max_achievable = max_achievable


class ConfigError(ModelError):
    """Run configuration failed validation."""
