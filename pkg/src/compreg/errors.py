"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`CompregError`.  Each family carries an ``exit_code`` used by the
command-line interface, so scripts can tell failures apart without
parsing stderr.
"""

from __future__ import annotations


class CompregError(Exception):
    exit_code = 1


# Input / domain errors
class NegativeInput(CompregError, ValueError):
    exit_code = 10


class DegenerateInput(CompregError, ValueError):
    exit_code = 11


class DimMismatch(CompregError, ValueError):
    exit_code = 12


class BoundaryPoint(CompregError, ValueError):
    """A log-ratio transform was asked to handle a zero part."""

    exit_code = 13


class EmptyData(CompregError, ValueError):
    exit_code = 14


class NotComposition(CompregError, ValueError):
    """Row sums deviate from one by more than the accepted tolerance."""

    exit_code = 15


# Fitting errors
class SupportError(CompregError, ArithmeticError):
    """A positive outcome part has zero predicted mass."""

    exit_code = 20


class RowStarvation(CompregError, ArithmeticError):
    def __init__(self, rows, message=None):
        self.rows = tuple(int(j) for j in rows)
        super().__init__(message or f"no outcome mass assigned to predictor row(s) {list(self.rows)}")

    exit_code = 21


class RankDeficient(CompregError, ArithmeticError):
    exit_code = 22


class ConvergenceFailure(CompregError, RuntimeError):
    """Iterative fit stopped at ``max_iter``; ``last`` holds the final iterate."""

    exit_code = 23

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class UnsupportedDimension(CompregError, ValueError):
    exit_code = 24


# I/O errors
class SchemaError(CompregError, KeyError):
    exit_code = 30

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ParseError(CompregError, ValueError):
    exit_code = 31


class ConfigError(CompregError, ValueError):
    exit_code = 32


class ReplicateError(CompregError, RuntimeError):
    """A resampling replicate failed; ``index`` names which one."""

    exit_code = 40

    def __init__(self, index, cause):
        super().__init__(f"replicate {index} failed: {cause}")
        self.index = index
        self.cause = cause


class ZeroConcentration(CompregError, ValueError):
    """A Dirichlet parameter would be zero."""

    exit_code = 25
