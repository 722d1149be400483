"""Stochastic Allen-Cahn equations with transport noise: flows, transformed PDEs and rate functions."""

from .errors import (
    ConfigError,
    DegenerateCoefficientError,
    DomainError,
    InversionError,
    ParameterError,
    SacldpError,
    SolverError,
    StabilityError,
    StepSizeError,
)
from .field import FieldPath, Mode, ModeSet, sample_path
from .grid import SpaceGrid, TimeGrid

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateCoefficientError",
    "DomainError",
    "FieldPath",
    "InversionError",
    "Mode",
    "ModeSet",
    "ParameterError",
    "SacldpError",
    "SolverError",
    "SpaceGrid",
    "StabilityError",
    "StepSizeError",
    "TimeGrid",
    "sample_path",
]
