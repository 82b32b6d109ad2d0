"""Exception hierarchy shared by all modules.

Two families exist so the command line can map them to exit codes:
``ValidationError`` for bad inputs and ``NumericalError`` for computations
that cannot be trusted.
"""
from __future__ import annotations


class UtilHedgeError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(UtilHedgeError, ValueError):
    """Input violates a documented precondition."""


class NumericalError(UtilHedgeError, ArithmeticError):
    """A numerical routine failed or produced an untrustworthy value."""


class DivergentExponent(ValidationError):
    """Exponent requested outside the convergence strip of the jump law."""


class OutsideCone(ValidationError):
    """Investment fraction leaves the admissible cone 1 + eta*x > 0."""


class BoundaryMaximizer(NumericalError):
    """Optimal fraction sits on the boundary of the admissible cone."""


class PoleHit(NumericalError):
    """Argument coincides with the pole of the Gamma-OU exponent."""


class PolePath(NumericalError):
    """An exponential-affine argument path passes through the pole."""


class IntegrabilityViolation(ValidationError):
    """A required exponential moment of the volatility driver does not exist."""


class QuadratureDivergence(NumericalError):
    """Quadrature did not reach the requested tolerance."""


class NegativePremium(NumericalError):
    """Risk premium came out negative beyond rounding."""


class NonPositivePrice(ValidationError):
    """Price path contains a non-positive value."""


class EnvelopeOverflow(NumericalError):
    """Rejection sampler envelope is unbounded."""


class ThinningBoundViolation(NumericalError):
    """Thinning intensity exceeded its dominating bound."""


class GridMismatch(ValidationError):
    """Simulated paths do not live on the engine time grid."""


class MissingWeights(ValidationError):
    """Reweighting requested on paths that carry no weights."""
