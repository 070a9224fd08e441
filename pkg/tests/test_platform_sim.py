from fractions import Fraction

import numpy as np
import pandas as pd
import pytest

from app.core.errors import PlatformError
from app.services.platform_sim import (
    SuccessObjective,
    TiePolicy,
    assemble_training,
    evaluate_success,
    fit_argmax_classifier,
)
from app.services.strategies import Transformation, apply_feature_label
from app.services.tabular import Dataset, DatasetRole, empirical_joint
from tests.conftest import make_universe, random_dataset


def _mixture(universe, modified, rest):
    return assemble_training(
        Dataset.from_samples(universe, modified, DatasetRole.COLLECTIVE_MODIFIED),
        Dataset.from_samples(universe, rest, DatasetRole.NON_COLLECTIVE),
    )


def test_mixture_is_the_weighted_sum():
    universe = make_universe((2, 3), 3)
    modified = random_dataset(universe, 17, seed=1, role=DatasetRole.COLLECTIVE_MODIFIED)
    rest = random_dataset(universe, 41, seed=2, role=DatasetRole.NON_COLLECTIVE)
    mix = assemble_training(modified, rest)
    assert mix.N == 58
    a, b = empirical_joint(modified), empirical_joint(rest)
    for x0 in range(2):
        for x1 in range(3):
            for y in range(3):
                x = (x0, x1)
                expected = Fraction(17, 58) * a.exact_prob(x, y) + Fraction(41, 58) * b.exact_prob(x, y)
                assert mix.exact_prob(x, y) == expected


def test_mixture_without_base_users():
    universe = make_universe((2,), 2)
    mix = _mixture(universe, [((0,), 1), ((1,), 0)], [])
    assert mix.N == 2 and mix.n_rest == 0
    assert mix.exact_prob((0,), 1) == Fraction(1, 2)


def test_mixture_preconditions():
    universe = make_universe((2,), 2)
    with pytest.raises(PlatformError):
        _mixture(universe, [], [((0,), 0)])
    other = make_universe((3,), 2)
    with pytest.raises(PlatformError):
        assemble_training(random_dataset(universe, 3, 0), random_dataset(other, 3, 0))


def test_classifier_argmax_and_ties():
    universe = make_universe((3,), 2)
    mix = _mixture(universe, [((0,), 0)] * 3 + [((0,), 1)], [((1,), 0)] * 2 + [((1,), 1)] * 2)
    clf = fit_argmax_classifier(mix)
    assert clf.predict_one((0,)) == 0
    assert clf.predict_one((1,)) == 0
    assert fit_argmax_classifier(mix, TiePolicy.HIGHEST).predict_one((1,)) == 1


def test_classifier_fallback():
    universe = make_universe((3,), 3)
    mix = _mixture(universe, [((0,), 2)] * 5, [((1,), 1)] * 2)
    assert fit_argmax_classifier(mix).predict_one((2,)) == 2
    assert fit_argmax_classifier(mix, fallback_policy="y0").predict_one((2,)) == 0


def test_classifier_is_optimal_on_observed_points():
    universe = make_universe((2, 3), 3)
    modified = random_dataset(universe, 40, seed=3, role=DatasetRole.COLLECTIVE_MODIFIED)
    rest = random_dataset(universe, 60, seed=4, role=DatasetRole.NON_COLLECTIVE)
    mix = assemble_training(modified, rest)
    clf = fit_argmax_classifier(mix)
    tally = {}
    for s in list(modified) + list(rest):
        tally.setdefault(s.x, [0, 0, 0])[s.y] += 1
    for x, counts in tally.items():
        chosen = clf.predict_one(x)
        assert counts[chosen] == max(counts)
        assert chosen == counts.index(max(counts))
    assert clf.as_dict() == {x: counts.index(max(counts)) for x, counts in tally.items()}


def test_success_rates():
    universe = make_universe((2, 2), 2)
    g = Transformation.fixing({0: 1})
    collective = random_dataset(universe, 50, seed=0)
    modified = apply_feature_label(collective, g, 1)
    mix = assemble_training(modified, random_dataset(universe, 10, seed=1, role=DatasetRole.NON_COLLECTIVE))
    clf = fit_argmax_classifier(mix)
    test = random_dataset(universe, 200, seed=2, role=DatasetRole.TEST)
    planted = evaluate_success(clf, test, g, SuccessObjective.PLANTING, 1)
    unplanted = evaluate_success(clf, test, g, "unplanting", 1)
    assert planted == 1.0
    assert planted + unplanted == 1.0


def test_complement_identity_on_random_classifiers():
    universe = make_universe((3, 2), 3)
    g = Transformation.fixing({1: 0})
    for seed in range(50):
        mix = assemble_training(random_dataset(universe, 30, seed, role=DatasetRole.COLLECTIVE_MODIFIED),
                                random_dataset(universe, 30, seed + 1, role=DatasetRole.NON_COLLECTIVE))
        clf = fit_argmax_classifier(mix)
        test = random_dataset(universe, 37, seed + 2, role=DatasetRole.TEST)
        for y in range(3):
            p = evaluate_success(clf, test, g, "planting", y)
            u = evaluate_success(clf, test, g, "unplanting", y)
            assert p + u == 1.0


def test_erasing_success():
    universe = make_universe((2, 2), 2)
    constant = _mixture(universe, [((0, 0), 1), ((1, 1), 1)], [])
    test = random_dataset(universe, 25, seed=0, role=DatasetRole.TEST)
    g = Transformation.fixing({0: 0})
    assert evaluate_success(fit_argmax_classifier(constant), test, g, "erasing") == 1.0
    varied = assemble_training(random_dataset(universe, 40, seed=1), random_dataset(universe, 40, seed=2))
    assert evaluate_success(fit_argmax_classifier(varied), test, Transformation.identity(), "erasing") == 1.0


def test_success_argument_checks():
    universe = make_universe((2,), 2)
    clf = fit_argmax_classifier(_mixture(universe, [((0,), 0)], []))
    g = Transformation.fixing({0: 0})
    empty = Dataset(universe, np.zeros((0, 1), dtype=np.int64), np.zeros(0, dtype=np.int64), DatasetRole.TEST)
    test = random_dataset(universe, 5, seed=0, role=DatasetRole.TEST)
    with pytest.raises(PlatformError):
        evaluate_success(clf, empty, g, "planting", 0)
    with pytest.raises(PlatformError):
        evaluate_success(clf, test, g, "planting")
    with pytest.raises(PlatformError):
        evaluate_success(clf, test, g, "erasing", 0)


def test_classifier_csv_export(tmp_path):
    universe = make_universe((2, 2), 2)
    clf = fit_argmax_classifier(_mixture(universe, [((0, 1), 1), ((1, 0), 0)], []))
    path = tmp_path / "clf.csv"
    clf.to_csv(path)
    df = pd.read_csv(path, dtype=str)
    assert list(df.columns) == ["f0", "f1", "label"]
    assert df.values.tolist() == [["c0", "c1", "y1"], ["c1", "c0", "y0"]]
