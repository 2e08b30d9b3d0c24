"""Structured-corrective layer networks with training diagnostics and
fixed-point analysis, plus a declarative multi-seed experiment harness."""

from . import diagnostics, dynamics, harness, linalg, network, shaping, tasks, training
from .errors import (
    ConfigError,
    ConvergenceWarning,
    DegenerateInputError,
    DegradedRankError,
    IdxFormatError,
    NonContractiveError,
    NotApplicableError,
    NumericalFailureError,
    ShapeError,
    SubspaceAmbiguityWarning,
    UndefinedMetricError,
)

__version__ = "0.1.0"
