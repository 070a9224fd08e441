"""
Exception hierarchy. Everything derives from ValueError so callers that only
care about "bad input" can catch broadly.
"""
from typing import Optional


class CollusionError(ValueError):
    pass


class UniverseError(CollusionError):
    pass


class EmptyDatasetError(CollusionError):
    def __init__(self, message: str = "empty dataset has no empirical distribution"):
        super().__init__(message)


class SplitError(CollusionError):
    pass


class StrategyError(CollusionError):
    pass


class BoundsError(CollusionError):
    pass


class ErasurePreconditionError(BoundsError):
    """Raised when n falls outside the erasure sample window."""

    def __init__(self, n: int, window, message: Optional[str] = None):
        self.n = n
        self.window = window
        super().__init__(
            message
            or f"erasure precondition violated: n={n} outside [{window.n_min}, {window.n_max}]"
        )


class PlatformError(CollusionError):
    pass


class ResultsError(CollusionError):
    pass
