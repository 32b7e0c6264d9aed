"""Surrogate models for post-failure maneuvering flight envelope characteristics."""

from .exceptions import (
    ConfigError,
    CorrelatedFactors,
    DegenerateVariance,
    Infeasible,
    InsufficientData,
    InvariantViolation,
    MfeError,
    NonConvergence,
    NonFiniteEvaluation,
    NotFitted,
    ParseError,
    RankDeficient,
    ShapeMismatch,
    ThetaSingularity,
)
from .mlp import MLPRegressor
from .poly import PolynomialRegressor, PolynomialSpec, enumerate_terms
from .records import InputVector, MfeRecord, ingest_csv, write_csv
from .tanh_models import TanhRegressor

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CorrelatedFactors",
    "DegenerateVariance",
    "Infeasible",
    "InputVector",
    "InsufficientData",
    "InvariantViolation",
    "MLPRegressor",
    "MfeError",
    "MfeRecord",
    "NonConvergence",
    "NonFiniteEvaluation",
    "NotFitted",
    "ParseError",
    "PolynomialRegressor",
    "PolynomialSpec",
    "RankDeficient",
    "ShapeMismatch",
    "TanhRegressor",
    "ThetaSingularity",
    "enumerate_terms",
    "ingest_csv",
    "write_csv",
]
