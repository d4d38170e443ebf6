"""Error taxonomy for the HTBB package."""

from typing import Optional


class HTBBError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(HTBBError, ValueError):
    """Tensor dimension is too small for a tree."""


class InconsistentCoresError(HTBBError, ValueError):
    """Core shapes do not match the topology or each other."""


class TooLargeError(HTBBError, ValueError):
    """Dense materialization would exceed the configured cap."""


class NotTallError(HTBBError, ValueError):
    """Matrix has fewer rows than columns."""


class RankTooLargeError(HTBBError, ValueError):
    """Requested rank exceeds the number of distinct index vectors."""


class InfeasibleRankError(HTBBError, ValueError):
    """Core rank exceeds the number of available rows."""


class NoRootLinkError(HTBBError, ValueError):
    """The root node has no link and no index values."""


class UnknownBenchmarkError(HTBBError, ValueError):
    """Benchmark name is not registered."""


class InvalidGridError(HTBBError, ValueError):
    """Grid parameters are invalid."""


class InvalidBudgetError(HTBBError, ValueError):
    """Evaluation budget must be positive."""


class NumericalDegeneracyError(HTBBError, ArithmeticError):
    """A submatrix required to be nonsingular is singular."""


class DegenerateBlockError(HTBBError, ArithmeticError):
    """A block of black-box values carries no information (all zeros)."""


class BudgetExhaustedError(HTBBError):
    """The oracle refused to evaluate an uncached index."""

    def __init__(self, evaluations: int, budget: int, missing: Optional[int] = None):
        self.evaluations = evaluations
        self.budget = budget
        self.missing = missing
        message = f"Evaluation budget exhausted ({evaluations}/{budget})"
        if missing:
            message += f", {missing} values not computed"
        super().__init__(message)
