"""Exception types shared across the lab."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain where a formula is defined."""


class FoldError(DomainError):
    """No real root of mu (1 - mu) = a * gamma: gamma is beyond the fold.

    ``index`` is the (zero-based) component that failed, when known.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class RangeError(DomainError):
    """A requested energy lies outside the range covered by a segment."""


class ConvergenceError(RuntimeError):
    """An iterative solver did not converge.

    ``last_iterate`` carries whatever the solver had when it stopped so the
    caller can re-seed (e.g. from a continuation step).
    """

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class ValidityError(DomainError):
    """A perturbative parameter exceeds its validity guard."""
