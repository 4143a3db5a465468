"""Exception types shared across the package.

Every error raised on a contract violation derives from :class:`CocolqError`
so callers can catch the package's failures with a single except clause while
still discriminating the cause.
"""

from __future__ import annotations


class CocolqError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(CocolqError, ValueError):
    """An argument violates a documented precondition (shape, finiteness,
    symmetry, definiteness class, or admissible range)."""


class NotPsdError(CocolqError):
    """A matrix required to be positive semidefinite has an eigenvalue below
    the tolerance floor."""


class NotPdError(CocolqError):
    """A matrix required to be strictly positive definite is singular or
    indefinite."""


class UnstableMatrixError(CocolqError):
    """A fixed-point iteration on a matrix equation failed to converge within
    its iteration cap (spectral radius at or above one)."""


class NotStabilizableError(CocolqError):
    """Riccati iteration diverged: the pair (A, B) admits no stabilizing
    static feedback."""


class PresolveError(CocolqError):
    """Constraint rows are linearly dependent with contradictory right-hand
    sides. ``rows`` lists the offending (0-based) row indices."""

    def __init__(self, message: str, rows: tuple[int, ...] = ()):
        super().__init__(message)
        self.rows = rows


class SolverError(CocolqError):
    """The interior-point solver hit an unrecoverable numerical failure
    (e.g. the Schur complement lost positive definiteness beyond repair).
    Carries the last iteration metrics when available."""

    def __init__(self, message: str, metrics=None):
        super().__init__(message)
        self.metrics = metrics


class ExtractionError(CocolqError):
    """A gain could not be extracted because the state covariance block is
    numerically singular."""


class NotFullRowRankError(CocolqError):
    """B B^T is singular, so the closed-form feasible point does not exist."""


class LiftRankError(CocolqError):
    """The lifted input matrix fails the row-rank condition; a larger horizon
    is needed before the lifted step can be solved."""


class OutOfGuaranteeError(CocolqError):
    """A requested constant is only defined inside the guaranteed parameter
    range (alpha < 1/2)."""


class ConfigError(CocolqError):
    """A scenario or run configuration is inconsistent (e.g. discretization
    produced absurd magnitudes, or an option combination is unsupported)."""
