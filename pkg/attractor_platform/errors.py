"""
attractor_platform/errors.py
============================
Domain exceptions. Each one subclasses the builtin matching its nature so
callers catching ``ValueError`` / ``RuntimeError`` keep working.
"""
from __future__ import annotations
from typing import Any, Optional, Sequence

__all__ = [
    "AttractorPlatformError", "IntegrationDivergenceError", "ClusterCountError", "AmbiguousLabelError",
    "NonconvergenceError", "SourceBasinError", "InsufficientDataError", "ContractError",
    "ShapeMismatchError", "FormatError", "ConfigError", "PreconditionError",
]


class AttractorPlatformError(Exception):
    """Base class for every error the pipeline raises on purpose."""


class IntegrationDivergenceError(AttractorPlatformError, RuntimeError):
    def __init__(self, message: str, state: Any = None):
        super().__init__(message)
        self.state = state


class ClusterCountError(AttractorPlatformError, RuntimeError):
    def __init__(self, message: str, clusters: int, amplitudes: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.clusters = clusters
        self.amplitudes = amplitudes


class AmbiguousLabelError(AttractorPlatformError, RuntimeError):
    def __init__(self, message: str, amplitude: float, threshold: float):
        super().__init__(message)
        self.amplitude = amplitude
        self.threshold = threshold


class NonconvergenceError(AttractorPlatformError, RuntimeError):
    def __init__(self, message: str, iterations: int, gap: float):
        super().__init__(message)
        self.iterations = iterations
        self.gap = gap


class SourceBasinError(AttractorPlatformError, RuntimeError):
    pass


class InsufficientDataError(AttractorPlatformError, ValueError):
    pass


class ContractError(AttractorPlatformError, RuntimeError):
    pass


class ShapeMismatchError(AttractorPlatformError, ValueError):
    pass


class FormatError(AttractorPlatformError, ValueError):
    pass


class ConfigError(AttractorPlatformError, ValueError):
    pass


class PreconditionError(AttractorPlatformError, RuntimeError):
    pass
