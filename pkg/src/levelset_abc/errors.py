"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so anything user-facing should raise one
of these rather than a bare ``ValueError``.
"""

from __future__ import annotations


class LevelSetError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(LevelSetError, ValueError):
    """An argument violates a documented precondition."""


class OutOfSupportError(InvalidArgumentError):
    """A point lies outside the box it is required to be in."""


class InvalidStartError(InvalidArgumentError):
    """A chain was asked to start where its target density is zero."""


class EvaluationError(LevelSetError):
    """A target function failed on one row of a design.

    Attributes
    ----------
    row : int
        Zero-based index of the offending design row.
    """

    def __init__(self, row: int, cause: BaseException):
        super().__init__(f"evaluation failed on design row {row}: {cause!r}")
        self.row = row
        self.cause = cause


class NumericalError(LevelSetError, ArithmeticError):
    """A factorization or estimator broke down numerically."""


class FormatError(LevelSetError, OSError):
    """A file exists but does not parse as the expected schema."""


class UndefinedStatisticError(NumericalError):
    """A statistic is undefined for the data given (e.g. zero variance)."""
