"""
Exceptions raised by the solver library.
"""
from typing import Optional


class KrylovError(Exception):
    """Base class for all solver library errors."""


class BreakdownError(KrylovError):
    """A factorization or iteration could not continue."""

    def __init__(self, reason: str, index: Optional[int] = None):
        self.reason = reason
        self.index = index
        message = reason if index is None else f"{reason} (at {index})"
        super().__init__(message)


class IluBreakdownError(BreakdownError):
    """Zero or near-zero pivot during ILU(0)."""


class GramBreakdownError(BreakdownError):
    """Gram matrix numerically singular or not positive definite."""


class BasisCollapseError(BreakdownError):
    """The monomial s-step basis lost linear independence."""


class RankDeficiencyError(BreakdownError):
    """Least-squares matrix lost full column rank."""


class OrthogonalityLossError(KrylovError):
    """Debug-mode orthogonality invariant violated."""
