"""Custom exceptions for mfglab numerics and experiments."""

from typing import Any, Dict, Optional


class MfgLabError(Exception):
    """Base exception for mfglab errors."""

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.context = context or {}


class ParameterDomainError(MfgLabError):
    """Raised when model constants leave the admissible domain (e.g. q^2 > eps)."""


class TimeRangeError(MfgLabError):
    """Raised when a time lies outside [0, T]."""


class IntegrationFailureError(MfgLabError):
    """Raised when an ODE integration blows up."""


class BundleConstructionError(MfgLabError):
    """Raised when a Brownian bundle cannot be built."""


class DimensionMismatchError(MfgLabError):
    """Raised when bundle, grid or path shapes disagree."""


class NumericError(MfgLabError):
    """Raised on non-finite values; context carries step and particle."""


class UnsupportedError(MfgLabError):
    """Raised for requests outside the implemented cases."""


class QuadratureError(MfgLabError):
    """Raised when a test-function expectation does not converge."""


class TruncationDomainError(MfgLabError):
    """Raised when a grid function does not decay at the truncation boundary."""


class CovarianceError(MfgLabError):
    """Raised when a covariance matrix cannot be factorised."""


class JitterExhaustedError(CovarianceError):
    """Raised when all jitter escalation attempts are exhausted."""


class ConfigError(MfgLabError):
    """Raised when an experiment configuration is invalid; context has the field path."""


class ComparisonRefusedError(MfgLabError):
    """Raised when a distribution comparison has too few samples."""
