"""
Categorical data model: the feature/label universe, datasets of index-coded
samples, and exact integer co-occurrence counts.

Feature vectors are canonicalized to tuples of category indices at ingestion.
Internally a vector is also packed into a single int64 "key" (mixed radix,
first feature most significant), so ascending key order equals lexicographic
order on index tuples. That order is the canonical enumeration every module
sums in.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import cached_property, reduce
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.core.errors import EmptyDatasetError, SplitError, UniverseError

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"
_MAX_KEY = 2 ** 62

FeatureVector = Tuple[int, ...]


class DatasetRole(str, Enum):
    BASE = "base"
    COLLECTIVE = "collective"
    COLLECTIVE_MODIFIED = "collective-modified"
    NON_COLLECTIVE = "non-collective"
    TEST = "test"
    ESTIMATION_SPLIT = "estimation-split"


@dataclass(frozen=True)
class Feature:
    name: str
    categories: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        if len(self.categories) < 2:
            raise UniverseError(f"feature '{self.name}' needs at least 2 categories")
        if len(set(self.categories)) != len(self.categories):
            raise UniverseError(f"feature '{self.name}' has duplicate categories")

    @property
    def size(self) -> int:
        return len(self.categories)


@dataclass(frozen=True)
class Universe:
    """The finite schema X x Y."""
    features: Tuple[Feature, ...]
    labels: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.features:
            raise UniverseError("universe needs at least one feature")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise UniverseError("duplicate feature names")
        if LABEL_COLUMN in names:
            raise UniverseError(f"'{LABEL_COLUMN}' is reserved for the label column")
        if len(self.labels) < 2:
            raise UniverseError("label list needs at least 2 entries")
        if len(set(self.labels)) != len(self.labels):
            raise UniverseError("duplicate label names")
        if self.cardinality * len(self.labels) >= _MAX_KEY:
            raise UniverseError("universe too large for int64 cell keys")

    @classmethod
    def from_dict(cls, data: Dict) -> "Universe":
        """{"features": [{"name": ..., "categories": [...]}, ...], "labels": [...]}"""
        features = tuple(Feature(f["name"], tuple(f["categories"])) for f in data["features"])
        return cls(features, tuple(data["labels"]))

    def to_dict(self) -> Dict:
        return {
            "features": [{"name": f.name, "categories": list(f.categories)} for f in self.features],
            "labels": list(self.labels),
        }

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def feature_names(self) -> List[str]:
        return [f.name for f in self.features]

    @cached_property
    def radices(self) -> Tuple[int, ...]:
        return tuple(f.size for f in self.features)

    @cached_property
    def cardinality(self) -> int:
        """#X, exact (Python int)."""
        return reduce(lambda a, b: a * b, self.radices, 1)

    @cached_property
    def strides(self) -> Tuple[int, ...]:
        out = []
        acc = 1
        for r in reversed(self.radices):
            out.append(acc)
            acc *= r
        return tuple(reversed(out))

    @cached_property
    def index_dtype(self):
        return np.uint8 if max(self.radices) <= 255 else np.int32

    def feature_index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise UniverseError(f"unknown feature '{name}'")

    def category_index(self, feature: Union[int, str], category: str) -> int:
        fi = feature if isinstance(feature, int) else self.feature_index(feature)
        try:
            return self.features[fi].categories.index(category)
        except ValueError:
            raise UniverseError(f"unknown category '{category}' for feature '{self.features[fi].name}'")

    def label_index(self, label: Union[int, str]) -> int:
        if isinstance(label, (int, np.integer)):
            if not 0 <= int(label) < self.n_labels:
                raise UniverseError(f"label index {label} out of range")
            return int(label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise UniverseError(f"unknown label '{label}'")

    def validate_vector(self, x: Sequence[int]) -> FeatureVector:
        x = tuple(int(v) for v in x)
        if len(x) != self.n_features:
            raise UniverseError(f"feature vector has {len(x)} entries, expected {self.n_features}")
        for v, r in zip(x, self.radices):
            if not 0 <= v < r:
                raise UniverseError(f"category index {v} out of range in {x}")
        return x

    def encode(self, features: np.ndarray) -> np.ndarray:
        """Pack an (m, d) index matrix into int64 keys."""
        features = np.asarray(features)
        if features.ndim == 1:
            features = features.reshape(1, -1)
        keys = np.zeros(features.shape[0], dtype=np.int64)
        for j, stride in enumerate(self.strides):
            keys += features[:, j].astype(np.int64) * stride
        return keys

    def encode_vector(self, x: Sequence[int]) -> int:
        return int(sum(int(v) * s for v, s in zip(x, self.strides)))

    def decode(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        out = np.empty((keys.shape[0], self.n_features), dtype=self.index_dtype)
        rest = keys.copy()
        for j, stride in enumerate(self.strides):
            out[:, j] = rest // stride
            rest = rest % stride
        return out

    def decode_key(self, key: int) -> FeatureVector:
        out = []
        for stride in self.strides:
            out.append(int(key // stride))
            key = key % stride
        return tuple(out)

    def vector_names(self, x: Sequence[int]) -> Dict[str, str]:
        return {f.name: f.categories[int(v)] for f, v in zip(self.features, x)}


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    # Private read-only copy unless the array is already read-only with the right dtype
    if arr.flags.writeable or arr.dtype != dtype:
        arr = np.array(arr, dtype=dtype)
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Sample:
    x: FeatureVector
    y: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Ordered multiset of samples. Arrays are read-only after construction;
    every transformation returns a new Dataset.
    """
    universe: Universe
    features: np.ndarray
    labels: np.ndarray
    role: DatasetRole = DatasetRole.BASE

    def __post_init__(self):
        feats = np.asarray(self.features)
        labs = np.asarray(self.labels)
        if feats.size == 0:
            feats = feats.reshape(0, self.universe.n_features)
        if feats.ndim != 2 or feats.shape[1] != self.universe.n_features:
            raise UniverseError(f"feature matrix shape {feats.shape} does not match universe")
        if labs.shape != (feats.shape[0],):
            raise UniverseError("labels must be one per sample")
        if feats.shape[0]:
            radices = np.asarray(self.universe.radices)
            if feats.min() < 0 or (feats.max(axis=0) >= radices).any():
                raise UniverseError("category index out of range")
            if labs.min() < 0 or labs.max() >= self.universe.n_labels:
                raise UniverseError("label index out of range")
        feats = _frozen(feats, self.universe.index_dtype)
        labs = _frozen(labs, np.int16 if self.universe.n_labels < 2 ** 15 else np.int32)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        object.__setattr__(self, "role", DatasetRole(self.role))

    @classmethod
    def from_samples(cls, universe: Universe, samples: Sequence, role: DatasetRole = DatasetRole.BASE) -> "Dataset":
        """Accepts Sample objects or (x, y) pairs."""
        xs, ys = [], []
        for s in samples:
            x, y = (s.x, s.y) if isinstance(s, Sample) else s
            xs.append(universe.validate_vector(x))
            ys.append(universe.label_index(y))
        feats = np.array(xs, dtype=np.int64).reshape(len(xs), universe.n_features)
        return cls(universe, feats, np.array(ys, dtype=np.int64), role)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __iter__(self) -> Iterator[Sample]:
        for row, y in zip(self.features.tolist(), self.labels.tolist()):
            yield Sample(tuple(row), y)

    @property
    def samples(self) -> List[Sample]:
        return list(self)

    @cached_property
    def keys(self) -> np.ndarray:
        keys = self.universe.encode(self.features)
        keys.setflags(write=False)
        return keys

    def with_role(self, role: DatasetRole) -> "Dataset":
        return Dataset(self.universe, self.features, self.labels, role)

    def take(self, indices: np.ndarray, role: Optional[DatasetRole] = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.universe, self.features[indices], self.labels[indices], role or self.role)

    @staticmethod
    def concat(datasets: Sequence["Dataset"], role: DatasetRole) -> "Dataset":
        if not datasets:
            raise EmptyDatasetError("nothing to concatenate")
        universe = datasets[0].universe
        for d in datasets[1:]:
            if d.universe != universe:
                raise UniverseError("cannot concatenate datasets over different universes")
        feats = np.concatenate([d.features for d in datasets], axis=0)
        labs = np.concatenate([d.labels for d in datasets], axis=0)
        return Dataset(universe, feats, labs, role)

    def project(self, feature_names: Sequence[str]) -> "Dataset":
        """Keep only the named features (in the given order); labels are untouched."""
        idx = [self.universe.feature_index(name) for name in feature_names]
        universe = Universe(tuple(self.universe.features[j] for j in idx), self.universe.labels)
        return Dataset(universe, self.features[:, idx], self.labels, self.role)

    def to_frame(self) -> pd.DataFrame:
        data = {}
        for j, f in enumerate(self.universe.features):
            data[f.name] = pd.Categorical.from_codes(self.features[:, j].astype(np.int64), categories=list(f.categories))
        data[LABEL_COLUMN] = pd.Categorical.from_codes(self.labels.astype(np.int64), categories=list(self.universe.labels))
        return pd.DataFrame(data)

    @classmethod
    def from_frame(cls, universe: Universe, df: pd.DataFrame, role: DatasetRole = DatasetRole.BASE) -> "Dataset":
        expected = universe.feature_names + [LABEL_COLUMN]
        if list(df.columns) != expected:
            raise UniverseError(f"columns {list(df.columns)} do not match universe {expected}")
        feats = np.empty((len(df), universe.n_features), dtype=np.int64)
        for j, f in enumerate(universe.features):
            codes = pd.Categorical(df[f.name].astype(str), categories=list(f.categories)).codes
            if (codes < 0).any():
                bad = df[f.name][codes < 0].iloc[0]
                raise UniverseError(f"unknown category '{bad}' for feature '{f.name}'")
            feats[:, j] = codes
        labs = pd.Categorical(df[LABEL_COLUMN].astype(str), categories=list(universe.labels)).codes
        if (labs < 0).any():
            raise UniverseError(f"unknown label '{df[LABEL_COLUMN][labs < 0].iloc[0]}'")
        return cls(universe, feats, labs.astype(np.int64), role)

    def write_csv(self, path: Union[str, Path]) -> None:
        """Header = feature names then "label"; one row per sample, category names as strings."""
        self.to_frame().to_csv(path, index=False)
        logger.info(f"Wrote {len(self)} samples to {path}")

    @classmethod
    def read_csv(cls, universe: Universe, path: Union[str, Path], role: DatasetRole = DatasetRole.BASE) -> "Dataset":
        # keep_default_na=False: "None" is a legitimate category name
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
        return cls.from_frame(universe, df, role)


class JointCounts:
    """
    Exact integer counts over observed (x, y) cells. Probabilities are
    count/total, converted to float only when queried.
    """

    def __init__(self, universe: Universe, keys: np.ndarray, labels: np.ndarray, counts: np.ndarray):
        self.universe = universe
        # sorted by (key, label), unique
        self.keys = np.asarray(keys, dtype=np.int64)
        self.cell_labels = np.asarray(labels, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.total = int(self.counts.sum())
        for arr in (self.keys, self.cell_labels, self.counts):
            arr.setflags(write=False)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "JointCounts":
        if len(dataset) == 0:
            raise EmptyDatasetError()
        n_labels = dataset.universe.n_labels
        combined = dataset.keys * n_labels + dataset.labels.astype(np.int64)
        uniq, cnt = np.unique(combined, return_counts=True)
        return cls(dataset.universe, uniq // n_labels, uniq % n_labels, cnt)

    def __len__(self) -> int:
        return int(self.counts.shape[0])

    @cached_property
    def cells(self) -> Dict[Tuple[FeatureVector, int], int]:
        decoded = self.universe.decode(self.keys).tolist()
        return {
            (tuple(x), int(y)): int(c)
            for x, y, c in zip(decoded, self.cell_labels.tolist(), self.counts.tolist())
        }

    @cached_property
    def _label_matrix(self) -> Tuple[np.ndarray, np.ndarray]:
        fkeys, inverse = np.unique(self.keys, return_inverse=True)
        matrix = np.zeros((fkeys.shape[0], self.universe.n_labels), dtype=np.int64)
        np.add.at(matrix, (inverse, self.cell_labels), self.counts)
        fkeys.setflags(write=False)
        matrix.setflags(write=False)
        return fkeys, matrix

    @property
    def feature_keys(self) -> np.ndarray:
        """Observed feature keys, ascending (canonical order)."""
        return self._label_matrix[0]

    @property
    def label_matrix(self) -> np.ndarray:
        """Row i = label counts at feature_keys[i]."""
        return self._label_matrix[1]

    @property
    def feature_counts(self) -> np.ndarray:
        return self.label_matrix.sum(axis=1)

    def label_counts_for(self, keys: np.ndarray) -> np.ndarray:
        """Label count rows for arbitrary feature keys; unseen keys give zero rows."""
        keys = np.asarray(keys, dtype=np.int64)
        fkeys, matrix = self._label_matrix
        out = np.zeros((keys.shape[0], self.universe.n_labels), dtype=np.int64)
        if fkeys.shape[0] == 0 or keys.shape[0] == 0:
            return out
        pos = np.clip(np.searchsorted(fkeys, keys), 0, fkeys.shape[0] - 1)
        hit = fkeys[pos] == keys
        out[hit] = matrix[pos[hit]]
        return out

    def count(self, x: Sequence[int], y: int) -> int:
        x = self.universe.validate_vector(x)
        return int(self.label_counts_for(np.array([self.universe.encode_vector(x)]))[0, int(y)])

    def feature_count(self, x: Sequence[int]) -> int:
        x = self.universe.validate_vector(x)
        return int(self.label_counts_for(np.array([self.universe.encode_vector(x)]))[0].sum())

    def exact_prob(self, x: Sequence[int], y: Optional[int] = None) -> Fraction:
        c = self.feature_count(x) if y is None else self.count(x, y)
        return Fraction(c, self.total)

    def label_totals(self) -> np.ndarray:
        return self.label_matrix.sum(axis=0)


def empirical_joint(dataset: Dataset) -> JointCounts:
    return JointCounts.from_dataset(dataset)


def marginal_feature_prob(counts: JointCounts, x: Sequence[int]) -> float:
    return counts.feature_count(x) / counts.total


def pair_prob(counts: JointCounts, x: Sequence[int], y: int) -> float:
    y = counts.universe.label_index(y)
    return counts.count(x, y) / counts.total


def split_dataset(dataset: Dataset, k: int, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Random split into (estimation part of size k, remainder). Both parts keep
    the input's relative order, so the result depends only on (dataset, k, seed).
    """
    if not 0 < k < len(dataset):
        raise SplitError(f"split size k={k} must satisfy 0 < k < {len(dataset)}")
    rng = np.random.default_rng(seed)
    chosen = np.zeros(len(dataset), dtype=bool)
    chosen[rng.choice(len(dataset), size=k, replace=False)] = True
    idx = np.arange(len(dataset))
    return (
        dataset.take(idx[chosen], DatasetRole.ESTIMATION_SPLIT),
        dataset.take(idx[~chosen], DatasetRole.COLLECTIVE),
    )
