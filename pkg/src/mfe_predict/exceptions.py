"""Exception types raised across the package."""


class MfeError(Exception):
    """Base class for all package errors."""


class RankDeficient(MfeError, ValueError):
    """A design or Jacobian matrix lost full column rank."""


class NonConvergence(MfeError, RuntimeError):
    """An iterative linear-algebra routine exceeded its iteration cap."""


class NonFiniteEvaluation(MfeError, FloatingPointError):
    """A user function returned NaN or Inf."""


class InsufficientData(MfeError, ValueError):
    """Fewer samples than model coefficients."""


class NotFitted(MfeError, AttributeError):
    """Model used before ``fit``."""


class ThetaSingularity(MfeError, ZeroDivisionError):
    """Pitch-angle relation is singular (theta near +/-90 deg)."""


class Infeasible(MfeError):
    """Trim optimization converged above the acceptance tolerance."""


class InvariantViolation(MfeError, ValueError):
    """A record violates a domain invariant."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ParseError(MfeError, ValueError):
    """Malformed input file."""


class CorrelatedFactors(MfeError, ValueError):
    """Sobol estimators require independent factors."""


class DegenerateVariance(MfeError, ValueError):
    """Model output variance is numerically zero."""


class ShapeMismatch(MfeError, ValueError):
    """Arrays with incompatible shapes."""


class ConfigError(MfeError, ValueError):
    """Invalid experiment configuration."""
