"""
Synthetic vehicle-evaluation dataset: 18 categorical features, a 4-class
"Car Evaluation" label, and the SUV-profile transformation used in the
experiments.

The generator is a two-component mixture. With probability `profile.share`
a row copies the 17 fixed profile values and draws Country from a skewed
distribution; otherwise every feature is drawn independently. Labels come
from a scoring rubric plus one seeded noise draw per row, so the output is a
pure function of (rows, seed, chunk size, config).
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from app.core.config import settings
from app.core.errors import CollusionError, SplitError, UniverseError
from app.services.strategies import EscapeSelector, Transformation
from app.services.tabular import LABEL_COLUMN, Dataset, DatasetRole, Feature, FeatureVector, Universe

logger = logging.getLogger(__name__)

COUNTRY = "Country of Manufacture"

CAR_FEATURES: List[Tuple[str, Tuple[str, ...]]] = [
    ("Model Type", ("Sedan", "SUV", "Coupe", "Hatchback", "Convertible", "Wagon", "Minivan", "Truck")),
    ("Fuel Type", ("Gasoline", "Diesel", "Electric", "Hybrid")),
    ("Transmission Type", ("Manual", "Automatic", "CVT")),
    ("Drive Type", ("FWD", "RWD", "AWD")),
    ("Safety Rating", ("1 star", "2 stars", "3 stars", "4 stars", "5 stars")),
    ("Interior Material", ("Cloth", "Leather", "Synthetic")),
    ("Infotainment System", ("Basic", "Advanced", "Premium", "None")),
    (COUNTRY, ("C1", "C2", "C3", "C4", "C5")),
    ("Warranty Length", ("3 years", "5 years", "7 years", "10 years")),
    ("Number of Doors", ("2", "4", "5")),
    ("Number of Seats", ("2", "4", "5", "7")),
    ("Air Conditioning", ("Yes", "No")),
    ("Navigation System", ("None", "Basic", "Advanced")),
    ("Tire Type", ("All-Season", "Summer", "Winter")),
    ("Sunroof", ("Yes", "No")),
    ("Sound System", ("Standard", "Premium", "High-end", "None")),
    ("Cruise Control", ("Yes", "No")),
    ("Bluetooth Connectivity", ("Yes", "No")),
]

CAR_LABELS = ("Excellent", "Good", "Average", "Poor")

# The targeted SUV profile: every feature except Country is fixed
SIGNAL_PROFILE: Dict[str, str] = {
    "Model Type": "SUV",
    "Fuel Type": "Diesel",
    "Transmission Type": "Manual",
    "Drive Type": "RWD",
    "Safety Rating": "4 stars",
    "Interior Material": "Synthetic",
    "Infotainment System": "Premium",
    "Warranty Length": "10 years",
    "Number of Doors": "5",
    "Number of Seats": "5",
    "Air Conditioning": "Yes",
    "Navigation System": "Advanced",
    "Tire Type": "All-Season",
    "Sunroof": "Yes",
    "Sound System": "Premium",
    "Cruise Control": "Yes",
    "Bluetooth Connectivity": "Yes",
}

# Constant escape vector for the feature-only strategy
ESCAPE_PROFILE: Dict[str, str] = {
    "Model Type": "Sedan",
    "Fuel Type": "Diesel",
    "Transmission Type": "Automatic",
    "Drive Type": "RWD",
    "Safety Rating": "1 star",
    "Interior Material": "Synthetic",
    "Infotainment System": "Premium",
    COUNTRY: "C1",
    "Warranty Length": "7 years",
    "Number of Doors": "5",
    "Number of Seats": "5",
    "Air Conditioning": "Yes",
    "Navigation System": "Advanced",
    "Tire Type": "All-Season",
    "Sunroof": "No",
    "Sound System": "Premium",
    "Cruise Control": "No",
    "Bluetooth Connectivity": "No",
}

# Published label counts inside the signal set on the 3M-row dataset
REFERENCE_SIGNAL_COUNTS: Dict[str, Dict[str, int]] = {
    "C1": {"Excellent": 18410, "Good": 9228, "Average": 0, "Poor": 1471},
    "C2": {"Excellent": 18504, "Good": 9214, "Average": 0, "Poor": 1461},
    "C3": {"Excellent": 58083, "Good": 29170, "Average": 0, "Poor": 4619},
    "C4": {"Excellent": 17491, "Good": 0, "Average": 2946, "Poor": 8911},
    "C5": {"Excellent": 18589, "Good": 9290, "Average": 0, "Poor": 1484},
}


def car_universe() -> Universe:
    return Universe(tuple(Feature(name, cats) for name, cats in CAR_FEATURES), CAR_LABELS)


def _default_contributions() -> Dict[str, Dict[str, float]]:
    return {
        "Safety Rating": {"1 star": 0, "2 stars": 8, "3 stars": 16, "4 stars": 24, "5 stars": 30},
        "Fuel Type": {"Gasoline": 10, "Diesel": 16, "Electric": 22, "Hybrid": 18},
        "Warranty Length": {"3 years": 4, "5 years": 10, "7 years": 16, "10 years": 22},
        "Infotainment System": {"Basic": 8, "Advanced": 14, "Premium": 20, "None": 0},
        "Sound System": {"Standard": 10, "Premium": 18, "High-end": 22, "None": 0},
    }


class ScoringRubric(BaseModel):
    """
    score = sum of per-feature contributions + country offset
            + country noise scale * noise value
    Label = first band whose threshold the score reaches (descending
    thresholds), else the last label.
    """
    contributions: Dict[str, Dict[str, float]] = Field(default_factory=_default_contributions)
    country_offset: Dict[str, float] = Field(default_factory=dict)
    country_noise_scale: Dict[str, float] = Field(default_factory=lambda: {"C4": 3.2})
    noise_values: List[float] = Field(default_factory=lambda: [0.0, -9.6, -14.0, -25.0, -60.0])
    noise_probs: List[float] = Field(default_factory=lambda: [0.60, 0.03, 0.07, 0.25, 0.05])
    thresholds: List[float] = Field(default_factory=lambda: [90.0, 70.0, 50.0])

    @model_validator(mode="after")
    def _check(self) -> "ScoringRubric":
        if len(self.noise_values) != len(self.noise_probs) or not self.noise_values:
            raise ValueError("noise_values and noise_probs must have the same nonzero length")
        if min(self.noise_probs) < 0 or abs(sum(self.noise_probs) - 1.0) > 1e-9:
            raise ValueError("noise_probs must be a probability vector")
        if any(a <= b for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be strictly descending")
        return self

    def _tables(self, universe: Universe) -> List[np.ndarray]:
        tables = []
        for f in universe.features:
            table = np.zeros(f.size, dtype=np.float64)
            for category, value in self.contributions.get(f.name, {}).items():
                table[f.categories.index(category)] = value
            tables.append(table)
        return tables

    def _per_country(self, universe: Universe, values: Dict[str, float], default: float) -> np.ndarray:
        f = universe.features[universe.feature_index(COUNTRY)]
        return np.array([values.get(c, default) for c in f.categories], dtype=np.float64)

    def score(self, universe: Universe, features: np.ndarray, noise_index: np.ndarray) -> np.ndarray:
        if len(self.thresholds) != universe.n_labels - 1:
            raise UniverseError(f"rubric has {len(self.thresholds)} thresholds for {universe.n_labels} labels")
        features = np.asarray(features)
        total = np.zeros(features.shape[0], dtype=np.float64)
        for j, table in enumerate(self._tables(universe)):
            total += table[features[:, j]]
        country = features[:, universe.feature_index(COUNTRY)]
        offset = self._per_country(universe, self.country_offset, 0.0)
        scale = self._per_country(universe, self.country_noise_scale, 1.0)
        noise = np.asarray(self.noise_values, dtype=np.float64)[np.asarray(noise_index)]
        return total + offset[country] + scale[country] * noise

    def label(self, universe: Universe, features: np.ndarray, noise_index: np.ndarray) -> np.ndarray:
        score = self.score(universe, features, noise_index)
        cuts = np.asarray(self.thresholds, dtype=np.float64)
        return (score[:, None] < cuts[None, :]).sum(axis=1)


def _default_country_weights() -> Dict[str, float]:
    return {"C1": 0.1394, "C2": 0.1397, "C3": 0.4398, "C4": 0.1405, "C5": 0.1406}


class ProfileConfig(BaseModel):
    share: float = Field(0.0696, ge=0.0, le=1.0)
    values: Dict[str, str] = Field(default_factory=lambda: dict(SIGNAL_PROFILE))
    country_weights: Dict[str, float] = Field(default_factory=_default_country_weights)


class SamplerConfig(BaseModel):
    # Per-feature category weights for the independent component; unlisted features are uniform
    weights: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    profile: ProfileConfig = Field(default_factory=ProfileConfig)

    def category_probs(self, feature: Feature) -> np.ndarray:
        given = self.weights.get(feature.name)
        if not given:
            return np.full(feature.size, 1.0 / feature.size)
        w = np.array([given.get(c, 0.0) for c in feature.categories], dtype=np.float64)
        if (w < 0).any() or w.sum() <= 0:
            raise UniverseError(f"bad sampler weights for '{feature.name}'")
        return w / w.sum()

    def country_probs(self, universe: Universe) -> np.ndarray:
        f = universe.features[universe.feature_index(COUNTRY)]
        w = np.array([self.profile.country_weights.get(c, 0.0) for c in f.categories], dtype=np.float64)
        if (w < 0).any() or w.sum() <= 0:
            raise UniverseError("bad profile country weights")
        return w / w.sum()


class GeneratorConfig(BaseModel):
    rubric: ScoringRubric = Field(default_factory=ScoringRubric)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "GeneratorConfig":
        return cls.model_validate_json(Path(path).read_text())

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), indent=2)


def _generate_chunk(universe: Universe, rubric: ScoringRubric, sampler: SamplerConfig,
                    seed_seq: np.random.SeedSequence, m: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed_seq)
    profile = rng.random(m) < sampler.profile.share
    features = np.empty((m, universe.n_features), dtype=universe.index_dtype)
    for j, f in enumerate(universe.features):
        features[:, j] = rng.choice(f.size, size=m, p=sampler.category_probs(f))
    k = int(profile.sum())
    if k:
        for name, category in sampler.profile.values.items():
            j = universe.feature_index(name)
            features[profile, j] = universe.category_index(j, category)
        country = universe.feature_index(COUNTRY)
        features[profile, country] = rng.choice(universe.radices[country], size=k, p=sampler.country_probs(universe))
    noise_index = rng.choice(len(rubric.noise_values), size=m, p=np.asarray(rubric.noise_probs))
    return features, rubric.label(universe, features, noise_index)


def generate_base_dataset(rows: int, seed: int, rubric: Optional[ScoringRubric] = None,
                          sampler: Optional[SamplerConfig] = None, threads: Optional[int] = None,
                          chunk_size: Optional[int] = None) -> Dataset:
    """
    Chunk i is generated from the i-th child of SeedSequence(seed), so the
    result does not depend on the thread count.
    """
    if rows < 1:
        raise CollusionError(f"rows must be >= 1, got {rows}")
    universe = car_universe()
    rubric = rubric or ScoringRubric()
    sampler = sampler or SamplerConfig()
    chunk_size = chunk_size or settings.CHUNK_SIZE
    sizes = [min(chunk_size, rows - start) for start in range(0, rows, chunk_size)]
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    workers = max(1, min(threads or settings.COLLUSION_THREADS, settings.COLLUSION_THREADS, len(sizes)))

    logger.info(f"Generating {rows:,} rows in {len(sizes)} chunk(s), seed={seed}, threads={workers}")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = []
        for i, part in enumerate(pool.map(lambda a: _generate_chunk(universe, rubric, sampler, *a),
                                          zip(children, sizes))):
            parts.append(part)
            logger.info(f"Chunk {i + 1}/{len(sizes)} done ({sizes[i]:,} rows)")
    features = np.concatenate([p[0] for p in parts], axis=0)
    labels = np.concatenate([p[1] for p in parts], axis=0)
    logger.info(f"✅ Generated base dataset with {rows:,} rows")
    return Dataset(universe, features, labels, DatasetRole.BASE)


def sample_consumers(base: Dataset, count: int, seed: int,
                     role: DatasetRole = DatasetRole.COLLECTIVE) -> Dataset:
    """Uniform draw without replacement, in draw order."""
    if not 0 <= count <= len(base):
        raise SplitError(f"cannot draw {count} consumers from a base of {len(base)}")
    rng = np.random.default_rng(seed)
    return base.take(rng.choice(len(base), size=count, replace=False), role)


def profile_transformation(universe: Optional[Universe] = None) -> Transformation:
    """
    Fix every profile feature present in the universe (all but Country).
    On the full car universe the signal set is the five countries.
    """
    universe = universe or car_universe()
    mapping = {}
    for name, category in SIGNAL_PROFILE.items():
        if name in universe.feature_names:
            j = universe.feature_index(name)
            mapping[j] = universe.category_index(j, category)
    g = Transformation.fixing(mapping)
    g.validate(universe)
    return g


def profile_escape_vector(universe: Optional[Universe] = None) -> FeatureVector:
    universe = universe or car_universe()
    return tuple(universe.category_index(j, ESCAPE_PROFILE[f.name]) for j, f in enumerate(universe.features))


def profile_escape_selector(universe: Optional[Universe] = None) -> EscapeSelector:
    return EscapeSelector.constant(profile_escape_vector(universe))


def signal_label_table(dataset: Dataset, g: Transformation) -> pd.DataFrame:
    """Label tallies inside the signal set, one row per combination of unfixed features."""
    universe = dataset.universe
    frame = dataset.to_frame()[g.in_signal_set(dataset.features)]
    index = [frame[universe.features[j].name] for j in g.unfixed(universe)]
    if not index:
        return pd.crosstab(pd.Series(["all"] * len(frame), name="signal"), frame[LABEL_COLUMN], dropna=False)
    return pd.crosstab(index, frame[LABEL_COLUMN], dropna=False)


def describe(dataset: Dataset, g: Transformation) -> Dict:
    universe = dataset.universe
    in_signal = g.in_signal_set(dataset.features)
    table = signal_label_table(dataset, g)
    return {
        "rows": len(dataset),
        "card_features": universe.cardinality,
        "card_signal": g.signal_cardinality(universe),
        "card_labels": universe.n_labels,
        "signal_rows": int(in_signal.sum()),
        "signal_share": float(in_signal.mean()) if len(dataset) else 0.0,
        "label_totals": {universe.labels[y]: int(c) for y, c in
                         enumerate(np.bincount(dataset.labels, minlength=universe.n_labels))},
        "signal_labels": {str(k if not isinstance(k, tuple) else " / ".join(k)):
                              {label: int(row.get(label, 0)) for label in universe.labels}
                          for k, row in table.fillna(0).iterrows()},
    }
