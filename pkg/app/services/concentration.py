"""
Hoeffding error terms and the per-objective union-bound budgets.

All logarithms are natural: Hoeffding's inequality gives
P(|mean - E| >= t) <= exp(-2kt^2), so the 1 - delta coverage only holds for ln.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Sequence

from app.core.errors import BoundsError

logger = logging.getLogger(__name__)

# n is integral; absorbs float noise in 2 ln(1/d)/eta^2 before ceil/floor
_WINDOW_TOL = 1e-9


class Objective(str, Enum):
    PLANTING_FL = "planting-FL"
    PLANTING_FO = "planting-FO"
    UNPLANTING = "unplanting"
    ERASING = "erasing"


@dataclass(frozen=True)
class ConfidenceBudget:
    delta: float
    objective: Objective
    card_signal: int
    card_labels: int
    card_features: int = 1

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if not 0.0 < self.delta <= 1.0:
            raise BoundsError(f"delta must lie in (0, 1], got {self.delta}")
        for name in ("card_signal", "card_labels", "card_features"):
            if int(getattr(self, name)) < 1:
                raise BoundsError(f"{name} must be >= 1")

    @property
    def event_count(self) -> int:
        """Number of union-bounded concentration events behind the objective's theorem."""
        xs, ys, xf = int(self.card_signal), int(self.card_labels), int(self.card_features)
        if self.objective in (Objective.PLANTING_FL, Objective.PLANTING_FO):
            return 2 + 2 * xs + 2 * xs * ys
        if self.objective == Objective.UNPLANTING:
            return 2 + 6 * xs
        return 2 + xs * ys + 2 * xf + 2 * xf * ys


@dataclass(frozen=True)
class ErasureWindow:
    n_min: int
    n_max: int

    @property
    def is_empty(self) -> bool:
        return self.n_min > self.n_max

    def contains(self, n: int) -> bool:
        return self.n_min <= n <= self.n_max


def _check_delta(delta_tilde: float) -> None:
    if not 0.0 < delta_tilde <= 1.0:
        raise BoundsError(f"delta_tilde must lie in (0, 1], got {delta_tilde}")


def hoeffding_term(delta_tilde: float, k: int) -> float:
    """R_d(k) = sqrt(ln(1/d) / (2k)). May exceed 1; callers decide about clamping."""
    _check_delta(delta_tilde)
    if k < 1:
        raise BoundsError(f"Hoeffding term needs k >= 1, got {k}")
    return math.sqrt(math.log(1.0 / delta_tilde) / (2.0 * k))


def union_delta(budget: ConfidenceBudget) -> float:
    return budget.delta / budget.event_count


def erasure_sample_window(delta_tilde: float, eta: float, N: int) -> ErasureWindow:
    """
    Integral range of collective sizes n with 2 ln(1/d)/eta^2 <= n <= N - 2 ln(1/d)/eta^2.
    The window is empty when N < 2 * n_min.
    """
    if eta <= 0:
        raise BoundsError(f"eta must be positive, got {eta}")
    if not 0.0 < delta_tilde < 1.0:
        raise BoundsError(f"delta_tilde must lie in (0, 1), got {delta_tilde}")
    threshold = 2.0 * math.log(1.0 / delta_tilde) / eta ** 2
    tol = _WINDOW_TOL * max(1.0, threshold)
    n_min = math.ceil(threshold - tol)
    n_max = math.floor(N - threshold + tol)
    return ErasureWindow(n_min=n_min, n_max=n_max)


def samples_for_error(delta: float, m: int, target: float) -> int:
    """
    Smallest n with R_{delta/(2 + 6 * 2^m)}(n) <= target. Grows linearly in m,
    i.e. logarithmically in the size of the union-bounded universe.
    """
    if target <= 0:
        raise BoundsError("target error must be positive")
    delta_tilde = delta / (2 + 6 * 2 ** m)
    _check_delta(delta_tilde)
    n = math.ceil(math.log(1.0 / delta_tilde) / (2.0 * target ** 2) - _WINDOW_TOL)
    return max(n, 1)


def estimation_curve(delta: float, exponents: Sequence[int], ns: Sequence[int]) -> Dict[int, List[float]]:
    """R_{delta/(2 + 6 * 2^m)}(n) over an n grid, one list per m."""
    out = {}
    for m in exponents:
        delta_tilde = delta / (2 + 6 * 2 ** m)
        out[m] = [hoeffding_term(delta_tilde, int(n)) for n in ns]
    return out
