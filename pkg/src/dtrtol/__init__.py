"""Tolerance and prediction intervals for two-stage dynamic treatment regimes."""

from dtrtol.errors import (
    ContractError,
    DegenerateSampleError,
    DomainError,
    InsufficientCellError,
    InsufficientSampleError,
    NumericError,
    SingularDesignError,
)
from dtrtol.intervals import IntervalEstimate, IntervalSpec

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "DegenerateSampleError",
    "DomainError",
    "InsufficientCellError",
    "InsufficientSampleError",
    "IntervalEstimate",
    "IntervalSpec",
    "NumericError",
    "SingularDesignError",
]
