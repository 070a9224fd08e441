import numpy as np
import pytest

from app.core.errors import BoundsError
from app.services.bounds import (
    PopulationDistribution,
    a1_margin,
    idr_bound,
    idr_curve,
    prior_bound_planting,
)
from app.services.car_datagen import COUNTRY, profile_transformation
from app.services.concentration import Objective
from app.services.strategies import Transformation
from app.services.tabular import Feature, Universe, empirical_joint
from tests.conftest import make_universe


@pytest.fixture
def two_outcome():
    universe = Universe((Feature("f", ("t", "u")),), ("0", "1"))
    dist = PopulationDistribution.from_cells(universe, {((0,), 0): 0.3, ((0,), 1): 0.1, ((1,), 0): 0.6})
    return dist, Transformation.fixing({0: 0})


def test_two_outcome_distribution(two_outcome):
    dist, g = two_outcome
    assert idr_bound(dist, g, 1, 0.25).bound == 1.0
    assert prior_bound_planting(dist, g, 1, 0.25) == pytest.approx(0.4, abs=1e-12)
    # the only signal element cracks once alpha exceeds 1/6
    assert idr_bound(dist, g, 1, 0.16).bound == 0.0
    assert idr_bound(dist, g, 1, 0.17).bound == 1.0


def test_alpha_must_be_open_unit(two_outcome):
    dist, g = two_outcome
    for alpha in (0.0, 1.0, -0.1):
        with pytest.raises(BoundsError):
            idr_bound(dist, g, 1, alpha)
        with pytest.raises(BoundsError):
            prior_bound_planting(dist, g, 1, alpha)


def test_distribution_validation():
    universe = make_universe((2,), 2)
    with pytest.raises(BoundsError):
        PopulationDistribution.from_cells(universe, {((0,), 0): 0.5, ((1,), 1): 0.4})
    with pytest.raises(BoundsError):
        PopulationDistribution.from_cells(universe, {((0,), 0): 1.5, ((1,), 1): -0.5})


def test_prior_bound_edge_cases():
    universe = make_universe((2,), 2)
    g = Transformation.fixing({0: 1})
    no_mass = PopulationDistribution.from_cells(universe, {((0,), 0): 1.0})
    assert prior_bound_planting(no_mass, g, 1, 0.3) == 1.0
    sure = PopulationDistribution.from_cells(universe, {((1,), 1): 0.4, ((0,), 0): 0.6})
    assert prior_bound_planting(sure, g, 1, 0.3) == 1.0
    mixed = PopulationDistribution.from_cells(universe, {((1,), 0): 0.3, ((1,), 1): 0.2, ((0,), 0): 0.5})
    assert prior_bound_planting(mixed, g, 1, 0.999) > 0.99


def _random_distribution(rng):
    shapes = [(2,), (4,), (2, 2), (2, 3), (4, 5), (2, 2, 5), (3, 3), (20,)]
    radices = shapes[rng.integers(len(shapes))]
    universe = make_universe(radices, int(rng.integers(2, 5)))
    cells = universe.cardinality * universe.n_labels
    p = rng.dirichlet(np.full(cells, 0.3))
    p[rng.random(cells) < 0.3] = 0.0
    if p.sum() == 0:
        p[0] = 1.0
    p = p / p.sum()
    idx = np.flatnonzero(p)
    keys, labels = idx // universe.n_labels, idx % universe.n_labels
    # renormalize in exact summation order so the total is within tolerance
    probs = p[idx] / np.sum(p[idx])
    dist = PopulationDistribution(universe, keys, labels, probs)
    fixed = {}
    for j, r in enumerate(radices):
        if rng.random() < 0.5:
            fixed[j] = int(rng.integers(r))
    return dist, Transformation.fixing(fixed), int(rng.integers(universe.n_labels))


def test_idr_is_at_least_the_prior_bound():
    alphas = [round(0.05 * k, 2) for k in range(1, 20)]
    violations, strict, total = 0, 0, 0
    for seed in range(1000):
        dist, g, y_star = _random_distribution(np.random.default_rng(seed))
        for alpha in alphas:
            ours = idr_bound(dist, g, y_star, alpha).bound
            prior = prior_bound_planting(dist, g, y_star, alpha)
            total += 1
            if ours < prior - 1e-12:
                violations += 1
            if ours > prior + 1e-12:
                strict += 1
    assert violations == 0
    assert strict >= 0.1 * total


def test_feature_only_idr_never_exceeds_feature_label():
    for seed in range(200):
        dist, g, y_star = _random_distribution(np.random.default_rng(seed))
        if not g.fixed:
            continue
        for alpha in (0.1, 0.3, 0.5, 0.7, 0.9):
            fl = idr_bound(dist, g, y_star, alpha, objective=Objective.PLANTING_FL).bound
            fo = idr_bound(dist, g, y_star, alpha, objective=Objective.PLANTING_FO).bound
            assert fo <= fl + 1e-12


def test_idr_nonincreasing_in_epsilon(two_outcome):
    dist, g = two_outcome
    values = [idr_bound(dist, g, 1, 0.3, epsilon=e).bound for e in (0.0, 0.05, 0.1, 0.2)]
    assert values == sorted(values, reverse=True)
    assert values[-1] == 0.0


def test_unplanting_idr_labels(two_outcome):
    dist, g = two_outcome
    report = idr_bound(dist, g, 0, 0.5, objective=Objective.UNPLANTING)
    assert report.labels == {(0,): 1}
    # margin 0.5 * 1 - 0.5 * (0.3 - 0.1) > 0
    assert report.bound == 1.0


def test_erasing_idr_flags_ties():
    universe = make_universe((2, 2), 2)
    cells = {((a, b), y): 0.125 for a in range(2) for b in range(2) for y in range(2)}
    dist = PopulationDistribution.from_cells(universe, cells)
    report = idr_bound(dist, Transformation.fixing({0: 0}), None, 0.5, objective=Objective.ERASING)
    assert report.warnings
    assert "degenerate" in report.warnings[0]
    assert a1_margin(dist, Transformation.fixing({0: 0})) == 0.0


def test_erasing_idr_with_strict_margin():
    universe = make_universe((2, 2), 2)
    cells = {((a, b), 0): 0.2 for a in range(2) for b in range(2)}
    cells.update({((a, b), 1): 0.05 for a in range(2) for b in range(2)})
    dist = PopulationDistribution.from_cells(universe, cells)
    g = Transformation.fixing({0: 0})
    report = idr_bound(dist, g, None, 0.2, objective=Objective.ERASING)
    assert not report.warnings
    assert report.bound == pytest.approx(1.0)
    assert a1_margin(dist, g) == pytest.approx(0.15)


def test_staircase_on_generated_data(car_base):
    universe = car_base.universe
    g = profile_transformation(universe)
    dist = PopulationDistribution.from_counts(empirical_joint(car_base))
    alphas = np.linspace(0.005, 0.995, 200)
    # Poor is a minority label in every country, so each country has to be climbed
    reports = idr_curve(dist, g, "Poor", alphas)
    values = [r.bound for r in reports]
    cracked = [r.cracked_features for r in reports]

    assert values[0] == 0.0 and not cracked[0]
    assert values[-1] == pytest.approx(1.0, abs=1e-12)
    assert len(cracked[-1]) == g.signal_cardinality(universe)
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert all(a <= b for a, b in zip(cracked, cracked[1:]))
    jumps = sum(1 for a, b in zip(values, values[1:]) if b > a)
    assert 2 <= jumps <= g.signal_cardinality(universe)

    country = universe.feature_index(COUNTRY)
    names = universe.features[country].categories
    order = []
    for before, after in zip(cracked, cracked[1:]):
        order.extend(sorted(names[x[country]] for x in after - before))
    # C4 has the smallest Excellent-over-Poor gap, C3 the most profile rows
    assert order[0] == "C4"
    assert order[-1] == "C3"
