"""Exception types shared across the package."""

from __future__ import annotations


class SWDesignError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SWDesignError, ValueError):
    """An input violates its documented contract.

    Messages name the offending field so configuration errors are
    actionable from the command line.
    """


class ModelError(SWDesignError):
    """A model matrix is structurally invalid.

    Raised when a working covariance fails its Cholesky factorization,
    which can only happen for parameters outside the admissible ranges.
    """


class UnidentifiableDesignError(SWDesignError):
    """The information matrix of a design is singular or numerically so.

    ``draw_index`` identifies the offending parameter draw when the failure
    occurs while averaging over a prior sample, else it is ``None``.
    """

    def __init__(self, message: str, draw_index: int | None = None):
        super().__init__(message)
        self.draw_index = draw_index
