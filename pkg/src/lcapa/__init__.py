"""Selective-partial-update affine projection estimators for fading channels with frequency offset."""

from . import analysis, estimators, fading, sim
from .errors import AnalysisError, ConfigError, DivergenceError, StabilityError

__all__ = ["analysis", "estimators", "fading", "sim", "ConfigError", "DivergenceError", "AnalysisError", "StabilityError"]
__version__ = "0.1.0"
