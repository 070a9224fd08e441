"""
The platform side: pool the modified collective data with the untouched base
users, fit the empirical argmax classifier and measure test-time success.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.errors import PlatformError
from app.services.strategies import Transformation
from app.services.tabular import (
    LABEL_COLUMN,
    Dataset,
    DatasetRole,
    FeatureVector,
    JointCounts,
    Universe,
    empirical_joint,
)

logger = logging.getLogger(__name__)


class TiePolicy(str, Enum):
    LOWEST = "lowest"
    HIGHEST = "highest"


class SuccessObjective(str, Enum):
    PLANTING = "planting"
    UNPLANTING = "unplanting"
    ERASING = "erasing"


@dataclass(frozen=True)
class MixtureCounts:
    """Counts over the concatenation of the modified collective data and D(N-n)."""
    counts: JointCounts
    n: int
    n_rest: int

    @property
    def N(self) -> int:
        return self.n + self.n_rest

    @property
    def universe(self) -> Universe:
        return self.counts.universe

    def exact_prob(self, x: Sequence[int], y: int) -> Fraction:
        return Fraction(self.counts.count(x, y), self.N)


def assemble_training(d_modified: Dataset, d_rest: Dataset) -> MixtureCounts:
    if len(d_modified) == 0:
        raise PlatformError("the collective contributes at least one sample")
    if d_modified.universe != d_rest.universe:
        raise PlatformError("collective and base data are over different universes")
    pooled = Dataset.concat([d_modified, d_rest], DatasetRole.BASE) if len(d_rest) else d_modified
    return MixtureCounts(empirical_joint(pooled), len(d_modified), len(d_rest))


class Classifier:
    """Lookup table x -> label over observed x, plus one fallback label for unseen x."""

    def __init__(self, universe: Universe, keys: np.ndarray, labels: np.ndarray, fallback_label: int):
        self.universe = universe
        self.keys = np.asarray(keys, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.fallback_label = int(fallback_label)

    def __len__(self) -> int:
        return int(self.keys.shape[0])

    def predict_keys(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        out = np.full(keys.shape[0], self.fallback_label, dtype=np.int64)
        if len(self) and keys.shape[0]:
            pos = np.clip(np.searchsorted(self.keys, keys), 0, len(self) - 1)
            hit = self.keys[pos] == keys
            out[hit] = self.labels[pos[hit]]
        return out

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.predict_keys(self.universe.encode(features))

    def predict_one(self, x: Sequence[int]) -> int:
        return int(self.predict_keys(np.array([self.universe.encode_vector(x)]))[0])

    def as_dict(self) -> Dict[FeatureVector, int]:
        decoded = self.universe.decode(self.keys).tolist()
        return {tuple(x): int(y) for x, y in zip(decoded, self.labels.tolist())}

    def to_frame(self) -> pd.DataFrame:
        decoded = self.universe.decode(self.keys)
        data = {}
        for j, f in enumerate(self.universe.features):
            data[f.name] = [f.categories[int(c)] for c in decoded[:, j]]
        data[LABEL_COLUMN] = [self.universe.labels[int(y)] for y in self.labels]
        return pd.DataFrame(data, columns=self.universe.feature_names + [LABEL_COLUMN])

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)
        logger.info(f"Wrote classifier table ({len(self)} entries) to {path}")


def fit_argmax_classifier(mix: MixtureCounts, tie_policy: Union[TiePolicy, str] = TiePolicy.LOWEST,
                          fallback_policy: Union[str, int] = "majority") -> Classifier:
    """
    Optimal (epsilon = 0) classifier for the pooled empirical distribution.
    fallback_policy is "majority" (most frequent label overall) or a label.
    """
    tie_policy = TiePolicy(tie_policy)
    universe = mix.universe
    matrix = mix.counts.label_matrix
    if matrix.shape[0] == 0:
        raise PlatformError("cannot fit a classifier on an empty mixture")
    if tie_policy == TiePolicy.LOWEST:
        labels = np.argmax(matrix, axis=1)
    else:
        labels = universe.n_labels - 1 - np.argmax(matrix[:, ::-1], axis=1)
    if isinstance(fallback_policy, str) and fallback_policy == "majority":
        fallback = int(np.argmax(mix.counts.label_totals()))
    else:
        fallback = universe.label_index(fallback_policy)
    return Classifier(universe, mix.counts.feature_keys, labels, fallback)


def evaluate_success(classifier: Classifier, d_test: Dataset, g: Transformation,
                     objective: Union[SuccessObjective, str], y_star: Optional[int] = None) -> float:
    """
    Planting: share of test points with f(g(x)) = y*.
    Unplanting: share with f(g(x)) != y*.
    Erasing: share with f(g(x)) = f(x).
    """
    objective = SuccessObjective(objective)
    m = len(d_test)
    if m == 0:
        raise PlatformError("empty test set")
    if objective == SuccessObjective.ERASING:
        if y_star is not None:
            raise PlatformError("erasing has no target label")
        on_signal = classifier.predict(g.apply(d_test.features))
        return int((on_signal == classifier.predict(d_test.features)).sum()) / m
    if y_star is None:
        raise PlatformError(f"{objective.value} needs a target label")
    y_star = d_test.universe.label_index(y_star)
    planted = int((classifier.predict(g.apply(d_test.features)) == y_star).sum()) / m
    if objective == SuccessObjective.PLANTING:
        return planted
    return 1.0 - planted
