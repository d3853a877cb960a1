"""Exception hierarchy for gmcprior.

Validation errors (bad inputs, bad configuration) derive from ``ValueError``
and map to CLI exit code 2. Runtime errors (numerical breakdown while
fitting) derive from ``RuntimeError`` and map to exit code 3.
"""

from __future__ import annotations

from typing import Optional


class GmcError(Exception):
    """Root of every error raised by gmcprior."""


class GmcValidationError(GmcError, ValueError):
    """Inputs or configuration violate a documented precondition."""


class GmcRuntimeError(GmcError, RuntimeError):
    """A numerical step failed while fitting or summarising."""


# --- spline basis -----------------------------------------------------------

class DegeneratePartition(GmcValidationError):
    pass


class DomainError(GmcValidationError):
    pass


class DimensionMismatch(GmcValidationError):
    pass


class SingularOmega(GmcRuntimeError):
    pass


# --- priors -----------------------------------------------------------------

class NonpositivePrecision(GmcValidationError):
    pass


class TauOutOfSlab(GmcValidationError):
    pass


class NonpositiveSigma(GmcValidationError):
    pass


# --- sampler ----------------------------------------------------------------

class NotPositiveDefinite(GmcRuntimeError):
    pass


class NonfiniteLogPosterior(GmcRuntimeError):
    pass


class NonfiniteDeviance(GmcRuntimeError):
    pass


class ModelError(GmcRuntimeError):
    pass


class BoundsViolation(GmcValidationError):
    pass


class InsufficientDraws(GmcValidationError):
    pass


class EmptyDraws(GmcValidationError):
    pass


# --- models -----------------------------------------------------------------

class MissingHierarchy(GmcValidationError):
    pass


class UnknownCurve(GmcValidationError):
    pass


class NoEvents(GmcValidationError):
    pass


class OutOfHorizon(GmcValidationError):
    pass


class UnknownCovariateSetting(GmcValidationError):
    pass


class UnknownTreatment(GmcValidationError):
    pass


# --- io ---------------------------------------------------------------------

class ConfigError(GmcValidationError):
    pass


class NegativeTime(GmcValidationError):
    pass


class ParseError(GmcValidationError):
    """A CSV cell could not be parsed.

    Attributes:
        line: 1-based line number in the file (the header is line 1)
        column: column name, or None for whole-row problems
        reason: human readable explanation
    """

    def __init__(self, line: int, column: Optional[str], reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        where = f"line {line}" + (f", column '{column}'" if column else "")
        super().__init__(f"{where}: {reason}")


class RangeError(ParseError):
    """A parsed value lies outside its allowed range."""
