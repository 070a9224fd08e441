import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.errors import StrategyError, UniverseError
from app.services.car_datagen import car_universe, profile_escape_selector, profile_transformation
from app.services.strategies import (
    EscapeSelector,
    LabelTable,
    Transformation,
    apply_erasure,
    apply_feature_label,
    apply_feature_only,
    apply_unplanting,
    estimate_erasure_labels,
    estimate_unplant_labels,
    signal_set,
)
from app.services.tabular import Dataset, DatasetRole, empirical_joint, split_dataset
from tests.conftest import make_universe, random_dataset


def test_profile_transformation_signal_set():
    universe = car_universe()
    g = profile_transformation(universe)
    assert g.signal_cardinality(universe) == 5
    xs = signal_set(g, universe)
    assert len(xs) == 5
    country = universe.feature_index("Country of Manufacture")
    assert [x[country] for x in xs] == [0, 1, 2, 3, 4]


def test_identity_and_full_fixing():
    universe = make_universe((2, 3), 2)
    assert Transformation.identity().signal_cardinality(universe) == 6
    g = Transformation.fixing({0: 1, 1: 2})
    assert g.signal_cardinality(universe) == 1
    assert signal_set(g, universe) == [(1, 2)]


def test_transformation_validation():
    universe = make_universe((2, 2), 2)
    with pytest.raises(UniverseError):
        Transformation.fixing({0: 5}).validate(universe)
    with pytest.raises(StrategyError):
        Transformation(((0, 1), (0, 0)))


@given(x=st.tuples(st.integers(0, 2), st.integers(0, 3), st.integers(0, 1)),
       fixed=st.dictionaries(st.integers(0, 2), st.integers(0, 1), max_size=3))
@settings(max_examples=100, deadline=None)
def test_transformation_is_idempotent(x, fixed):
    g = Transformation.fixing(fixed)
    assert g(g(x)) == g(x)


def test_transformation_json_roundtrip():
    universe = car_universe()
    g = profile_transformation(universe)
    assert Transformation.from_json(universe, g.to_json(universe)) == g


def test_feature_label_example():
    universe = make_universe((2, 2), 2)
    g = Transformation.fixing({0: 1})
    d = Dataset.from_samples(universe, [((0, 0), 0), ((0, 1), 1)], DatasetRole.COLLECTIVE)
    out = apply_feature_label(d, g, 1)
    assert [(s.x, s.y) for s in out] == [((1, 0), 1), ((1, 1), 1)]
    assert out.role == DatasetRole.COLLECTIVE_MODIFIED


def test_strategies_require_collective_role():
    universe = make_universe((2, 2), 2)
    d = random_dataset(universe, 5, seed=0, role=DatasetRole.BASE)
    with pytest.raises(StrategyError):
        apply_feature_label(d, Transformation.fixing({0: 1}), 0)


def test_feature_only_keeps_labels_and_escapes():
    universe = make_universe((3, 2, 2), 3)
    g = Transformation.fixing({0: 2, 2: 0})
    d = random_dataset(universe, 200, seed=4)
    out = apply_feature_only(d, g, 1)
    assert np.array_equal(out.labels, d.labels)
    target = d.labels == 1
    assert g.in_signal_set(out.features[target]).all()
    assert not g.in_signal_set(out.features[~target]).any()


def test_feature_only_constant_escape():
    universe = car_universe()
    g = profile_transformation(universe)
    selector = profile_escape_selector(universe)
    feats = np.zeros((3, universe.n_features), dtype=np.int64)
    d = Dataset(universe, feats, np.array([0, 1, 3]), DatasetRole.COLLECTIVE)
    out = apply_feature_only(d, g, 0, selector)
    assert g.in_signal_set(out.features[:1]).all()
    assert not g.in_signal_set(out.features[1:]).any()
    assert (out.features[1] == np.array(selector.x0)).all()


def test_escape_needs_a_fixed_feature():
    universe = make_universe((2, 2), 2)
    d = random_dataset(universe, 10, seed=0)
    with pytest.raises(StrategyError):
        apply_feature_only(d, Transformation.identity(), 0)
    with pytest.raises(StrategyError):
        EscapeSelector.constant((1, 0))(Transformation.fixing({0: 1}), universe, d.features)


def test_unplant_labels_example():
    universe = make_universe((2,), 4)
    g = Transformation.fixing({0: 0})
    est = Dataset.from_samples(universe, [((0,), 0)] * 10 + [((0,), 1)] * 3 + [((0,), 3)] * 5,
                               DatasetRole.ESTIMATION_SPLIT)
    table = estimate_unplant_labels(est, g, 0)
    assert table.as_dict() == {(0,): 3}
    assert table.defaulted == []


def test_unplant_labels_tie_and_default():
    universe = make_universe((2, 2), 3)
    g = Transformation.fixing({1: 0})
    est = Dataset.from_samples(universe, [((0, 0), 1), ((0, 0), 2), ((0, 1), 0)], DatasetRole.ESTIMATION_SPLIT)
    table = estimate_unplant_labels(est, g, 0)
    assert table.label_for((0, 0)) == 1
    # (1, 0) never observed: first label other than y*
    assert table.label_for((1, 0)) == 1
    assert table.defaulted == [(1, 0)]


def test_unplanting_never_outputs_target():
    universe = make_universe((3, 2), 3)
    g = Transformation.fixing({1: 1})
    d = random_dataset(universe, 120, seed=2)
    est, rest = split_dataset(d, 30, seed=2)
    table = estimate_unplant_labels(est, g, 2)
    out = apply_unplanting(d, g, table)
    assert (out.labels != 2).all()
    assert g.in_signal_set(out.features).all()


def test_unplanting_matches_per_sample_mapping():
    universe = make_universe((3, 3), 3)
    g = Transformation.fixing({0: 1})
    d = random_dataset(universe, 100, seed=8)
    est, _ = split_dataset(d, 40, seed=8)
    table = estimate_unplant_labels(est, g, 0)
    out = apply_unplanting(d, g, table)
    expected = [(g(s.x), table.label_for(g(s.x))) for s in d]
    assert [(s.x, s.y) for s in out] == expected


def test_label_table_without_default_raises():
    universe = make_universe((2,), 2)
    table = LabelTable.from_mapping(universe, {(0,): 1})
    with pytest.raises(StrategyError):
        table.label_for((1,))


def test_erasure_labels_example():
    universe = make_universe((2, 2), 2)
    g = Transformation.fixing({0: 0})
    d = Dataset.from_samples(universe, [((0, 0), 0)] * 30 + [((0, 0), 1)] * 7 + [((0, 1), 1)] * 2
                             + [((0, 1), 0)] * 2, DatasetRole.COLLECTIVE)
    table = estimate_erasure_labels(d, g)
    assert table.label_for((0, 0)) == 0
    # tie at (0, 1): lowest label index
    assert table.label_for((0, 1)) == 0


def test_erasure_keeps_feature_marginal():
    universe = make_universe((2, 3, 2), 3)
    g = Transformation.fixing({2: 1})
    d = random_dataset(universe, 300, seed=11)
    out = apply_erasure(d, g, estimate_erasure_labels(d, g))
    assert np.array_equal(out.features, d.features)
    table = estimate_erasure_labels(d, g)
    images = g.image_keys(universe, d.features)
    assert np.array_equal(out.labels, table.lookup(images))


def test_erasure_identity_is_pointwise_argmax():
    universe = make_universe((2, 2), 2)
    d = random_dataset(universe, 80, seed=6)
    g = Transformation.identity()
    table = estimate_erasure_labels(d, g)
    counts = empirical_joint(d)
    for x, y in table.as_dict().items():
        row = [counts.count(x, k) for k in range(2)]
        assert y == int(np.argmax(row))
