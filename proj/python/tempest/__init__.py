"""Tempered Laplace posteriors, predictive metrics and PAC-Bayes bounds for small MLPs."""

from ._tempest import *  # noqa: F401,F403
from ._tempest import (
    ConfigError,
    ConstraintViolation,
    DivergenceError,
    IoError,
    TempestError,
    run,
)

__all__ = [name for name in dir() if not name.startswith("_")]
