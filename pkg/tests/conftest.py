import numpy as np
import pytest

from app.services.car_datagen import generate_base_dataset
from app.services.tabular import Dataset, DatasetRole, Feature, Universe


def make_universe(radices, n_labels):
    features = tuple(
        Feature(f"f{j}", tuple(f"c{c}" for c in range(r))) for j, r in enumerate(radices)
    )
    return Universe(features, tuple(f"y{k}" for k in range(n_labels)))


def random_dataset(universe, size, seed, role=DatasetRole.COLLECTIVE, label_probs=None):
    rng = np.random.default_rng(seed)
    feats = np.column_stack([rng.integers(0, r, size=size) for r in universe.radices])
    p = label_probs if label_probs is not None else rng.dirichlet(np.ones(universe.n_labels))
    labels = rng.choice(universe.n_labels, size=size, p=p)
    return Dataset(universe, feats, labels, role)


@pytest.fixture
def tiny_universe():
    """2 features x 2 categories, labels {y0, y1}."""
    return make_universe((2, 2), 2)


@pytest.fixture
def letters_universe():
    """One feature over {a, b}, labels {1, 2}."""
    return Universe((Feature("x", ("a", "b")),), ("1", "2"))


@pytest.fixture(scope="session")
def car_base():
    return generate_base_dataset(150_000, seed=7, chunk_size=50_000)
