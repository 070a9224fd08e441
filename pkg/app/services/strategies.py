"""
The transformation g, its signal set, and the data-modification strategies a
collective can play on its pooled data.
"""
import itertools
import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import StrategyError, UniverseError
from app.services.tabular import (
    Dataset,
    DatasetRole,
    FeatureVector,
    JointCounts,
    Universe,
    empirical_joint,
)

logger = logging.getLogger(__name__)

# Above this many signal-set elements we stop enumerating X~ explicitly and
# only tabulate the images actually reached by data.
MAX_SIGNAL_ENUMERATION = 1_000_000


@dataclass(frozen=True)
class Transformation:
    """
    Feature-fixing map: each (feature index, category index) pair in `fixed`
    is forced, every other feature passes through. Idempotent by construction.
    """
    fixed: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        pairs = tuple(sorted((int(f), int(c)) for f, c in self.fixed))
        if len({f for f, _ in pairs}) != len(pairs):
            raise StrategyError("a feature can only be fixed once")
        object.__setattr__(self, "fixed", pairs)

    @classmethod
    def fixing(cls, mapping: Mapping[int, int]) -> "Transformation":
        return cls(tuple(mapping.items()))

    @classmethod
    def identity(cls) -> "Transformation":
        return cls(())

    @property
    def fixed_features(self) -> Dict[int, int]:
        return dict(self.fixed)

    @property
    def is_idempotent(self) -> bool:
        return True

    def validate(self, universe: Universe) -> None:
        for f, c in self.fixed:
            if not 0 <= f < universe.n_features:
                raise UniverseError(f"fixed feature index {f} out of range")
            if not 0 <= c < universe.radices[f]:
                raise UniverseError(f"fixed category {c} out of range for '{universe.features[f].name}'")

    def unfixed(self, universe: Universe) -> List[int]:
        fixed = self.fixed_features
        return [j for j in range(universe.n_features) if j not in fixed]

    def apply(self, features: np.ndarray) -> np.ndarray:
        out = np.array(features, copy=True)
        for f, c in self.fixed:
            out[:, f] = c
        return out

    def __call__(self, x: Sequence[int]) -> FeatureVector:
        out = list(x)
        for f, c in self.fixed:
            out[f] = c
        return tuple(int(v) for v in out)

    def in_signal_set(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features)
        mask = np.ones(features.shape[0], dtype=bool)
        for f, c in self.fixed:
            mask &= features[:, f] == c
        return mask

    def signal_cardinality(self, universe: Universe) -> int:
        """#X~ = product of category counts of the unfixed features."""
        out = 1
        for j in self.unfixed(universe):
            out *= universe.radices[j]
        return out

    def image_keys(self, universe: Universe, features: np.ndarray) -> np.ndarray:
        return universe.encode(self.apply(features))

    @classmethod
    def from_json(cls, universe: Universe, text: str) -> "Transformation":
        """{"fix": {"feature-name": "category-name", ...}}"""
        data = json.loads(text)
        mapping = {}
        for name, category in data["fix"].items():
            fi = universe.feature_index(name)
            mapping[fi] = universe.category_index(fi, category)
        g = cls.fixing(mapping)
        g.validate(universe)
        return g

    def to_json(self, universe: Universe) -> str:
        fix = {universe.features[f].name: universe.features[f].categories[c] for f, c in self.fixed}
        return json.dumps({"fix": fix})


def signal_set(g: Transformation, universe: Universe) -> List[FeatureVector]:
    """All g(x), in canonical (lexicographic index) order."""
    g.validate(universe)
    fixed = g.fixed_features
    ranges = [
        (fixed[j],) if j in fixed else range(universe.radices[j])
        for j in range(universe.n_features)
    ]
    return [tuple(v) for v in itertools.product(*ranges)]


def signal_keys(g: Transformation, universe: Universe) -> np.ndarray:
    xs = signal_set(g, universe)
    return universe.encode(np.array(xs, dtype=np.int64).reshape(len(xs), universe.n_features))


@dataclass(frozen=True, eq=False)
class LabelTable:
    """Label per signal-set element, with a flag telling estimated from defaulted entries."""
    universe: Universe
    keys: np.ndarray
    labels: np.ndarray
    estimated: np.ndarray
    default_label: Optional[int] = None

    def __post_init__(self):
        order = np.argsort(self.keys, kind="stable")
        object.__setattr__(self, "keys", np.asarray(self.keys, dtype=np.int64)[order])
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64)[order])
        object.__setattr__(self, "estimated", np.asarray(self.estimated, dtype=bool)[order])
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.universe.n_labels):
            raise StrategyError("label table holds labels outside the universe")

    @classmethod
    def from_mapping(cls, universe: Universe, mapping: Mapping[Sequence[int], int],
                     default_label: Optional[int] = None) -> "LabelTable":
        keys = [universe.encode_vector(universe.validate_vector(x)) for x in mapping]
        labels = [universe.label_index(y) for y in mapping.values()]
        return cls(universe, np.array(keys, dtype=np.int64), np.array(labels, dtype=np.int64),
                   np.ones(len(keys), dtype=bool), default_label)

    def __len__(self) -> int:
        return int(self.keys.shape[0])

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        out = np.empty(keys.shape[0], dtype=np.int64)
        if len(self):
            pos = np.clip(np.searchsorted(self.keys, keys), 0, len(self) - 1)
            hit = self.keys[pos] == keys
            out[hit] = self.labels[pos[hit]]
        else:
            hit = np.zeros(keys.shape[0], dtype=bool)
        if not hit.all():
            if self.default_label is None:
                missing = self.universe.decode_key(int(keys[~hit][0]))
                raise StrategyError(f"label table has no entry for {missing} and no default policy")
            out[~hit] = self.default_label
        return out

    def missing(self, keys: np.ndarray) -> np.ndarray:
        """Distinct keys with no entry; lookup() maps these to default_label."""
        return np.setdiff1d(np.asarray(keys, dtype=np.int64), self.keys)

    def label_for(self, x: Sequence[int]) -> int:
        return int(self.lookup(np.array([self.universe.encode_vector(x)]))[0])

    def as_dict(self) -> Dict[FeatureVector, int]:
        return {
            self.universe.decode_key(int(k)): int(y)
            for k, y in zip(self.keys.tolist(), self.labels.tolist())
        }

    @property
    def defaulted(self) -> List[FeatureVector]:
        return [self.universe.decode_key(int(k)) for k in self.keys[~self.estimated].tolist()]


class EscapeSelector:
    """
    Picks, per sample, some x0 outside the signal set for the feature-only strategy.

    "flip" (default): g(x) with its first fixed feature moved to the next category;
    it differs from every signal-set element on a fixed feature, so it is never in X~.
    "constant": one caller-supplied x0 for every sample.
    """

    def __init__(self, mode: str = "flip", x0: Optional[Sequence[int]] = None):
        if mode not in ("flip", "constant"):
            raise StrategyError(f"unknown escape mode '{mode}'")
        if mode == "constant" and x0 is None:
            raise StrategyError("constant escape mode needs x0")
        self.mode = mode
        self.x0 = tuple(int(v) for v in x0) if x0 is not None else None

    @classmethod
    def flip(cls) -> "EscapeSelector":
        return cls("flip")

    @classmethod
    def constant(cls, x0: Sequence[int]) -> "EscapeSelector":
        return cls("constant", x0)

    def __call__(self, g: Transformation, universe: Universe, features: np.ndarray) -> np.ndarray:
        if not g.fixed:
            raise StrategyError("no escape feature exists")
        if self.mode == "constant":
            x0 = universe.validate_vector(self.x0)
            if g(x0) == x0:
                raise StrategyError(f"escape vector {x0} lies in the signal set")
            return np.tile(np.array(x0, dtype=np.int64), (features.shape[0], 1))
        f, c = g.fixed[0]
        out = g.apply(np.asarray(features, dtype=np.int64))
        out[:, f] = (c + 1) % universe.radices[f]
        return out


def _require_role(dataset: Dataset, *roles: DatasetRole) -> None:
    if dataset.role not in roles:
        allowed = ", ".join(r.value for r in roles)
        raise StrategyError(f"expected a dataset with role {allowed}, got {dataset.role.value}")


def apply_feature_label(dataset: Dataset, g: Transformation, y_star: int) -> Dataset:
    """h(x, y) = (g(x), y*)."""
    _require_role(dataset, DatasetRole.COLLECTIVE)
    y_star = dataset.universe.label_index(y_star)
    labels = np.full(len(dataset), y_star, dtype=np.int64)
    return Dataset(dataset.universe, g.apply(dataset.features), labels, DatasetRole.COLLECTIVE_MODIFIED)


def apply_feature_only(dataset: Dataset, g: Transformation, y_star: int,
                       escape_selector: Optional[EscapeSelector] = None) -> Dataset:
    """
    h(x, y) = (g(x), y*) if y = y*, else (x0, y) with x0 outside X~.
    Labels never change.
    """
    _require_role(dataset, DatasetRole.COLLECTIVE)
    universe = dataset.universe
    y_star = universe.label_index(y_star)
    selector = escape_selector or EscapeSelector.flip()
    if not g.fixed:
        raise StrategyError("no escape feature exists")
    target = dataset.labels == y_star
    features = g.apply(dataset.features).astype(np.int64)
    others = ~target
    if others.any():
        features[others] = selector(g, universe, dataset.features[others])
    return Dataset(universe, features, dataset.labels, DatasetRole.COLLECTIVE_MODIFIED)


def _table_keys(g: Transformation, universe: Universe, datasets: Sequence[Dataset]) -> np.ndarray:
    if g.signal_cardinality(universe) <= MAX_SIGNAL_ENUMERATION:
        return signal_keys(g, universe)
    images = [g.image_keys(universe, d.features) for d in datasets if len(d)]
    return np.unique(np.concatenate(images)) if images else np.zeros(0, dtype=np.int64)


def estimate_unplant_labels(d_estimation: Dataset, g: Transformation, y_star: int) -> LabelTable:
    """
    y^_x~ = argmax over y' != y* of the estimation split's joint count at x~.
    Ties go to the lowest label index; x~ never seen in the split get the
    first label != y* and are flagged as defaulted.
    """
    _require_role(d_estimation, DatasetRole.ESTIMATION_SPLIT)
    universe = d_estimation.universe
    y_star = universe.label_index(y_star)
    if universe.n_labels < 2:
        raise StrategyError("unplanting needs a label other than y*")
    default = 0 if y_star != 0 else 1
    keys = _table_keys(g, universe, [d_estimation])
    counts = empirical_joint(d_estimation).label_counts_for(keys)
    restricted = counts.copy()
    restricted[:, y_star] = -1
    labels = np.argmax(restricted, axis=1)
    observed = counts.sum(axis=1) > 0
    if not observed.all():
        logger.debug(f"{int((~observed).sum())} signal-set elements unseen in estimation split; defaulted")
    return LabelTable(universe, keys, labels, observed, default_label=default)


def apply_unplanting(dataset: Dataset, g: Transformation, table: LabelTable) -> Dataset:
    """h(x, y) = (g(x), y^_{g(x)})."""
    _require_role(dataset, DatasetRole.COLLECTIVE)
    features = g.apply(dataset.features)
    labels = table.lookup(dataset.universe.encode(features))
    return Dataset(dataset.universe, features, labels, DatasetRole.COLLECTIVE_MODIFIED)


def estimate_erasure_labels(d_collective: Dataset, g: Transformation,
                            counts: Optional[JointCounts] = None) -> LabelTable:
    """
    y*_x~ = argmax over all labels of the collective's joint count at x~
    (lowest index on ties; unseen x~ fall to index 0 and are flagged).
    """
    universe = d_collective.universe
    keys = _table_keys(g, universe, [d_collective])
    counts = counts if counts is not None else empirical_joint(d_collective)
    matrix = counts.label_counts_for(keys)
    labels = np.argmax(matrix, axis=1)
    observed = matrix.sum(axis=1) > 0
    return LabelTable(universe, keys, labels, observed)


def apply_erasure(dataset: Dataset, g: Transformation, table: LabelTable) -> Dataset:
    """h(x, y) = (x, y*_{g(x)}); the feature marginal is untouched."""
    _require_role(dataset, DatasetRole.COLLECTIVE)
    labels = table.lookup(g.image_keys(dataset.universe, dataset.features))
    return Dataset(dataset.universe, dataset.features, labels, DatasetRole.COLLECTIVE_MODIFIED)
