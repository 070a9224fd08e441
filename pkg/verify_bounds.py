import numpy as np
from app.services.bounds import (
    BoundParams,
    PopulationDistribution,
    idr_bound,
    naive_unplanting_bound,
    planting_bound_fl,
    planting_bound_fo,
    prior_bound_planting,
    unplanting_bound,
)
from app.services.car_datagen import (
    REFERENCE_SIGNAL_COUNTS,
    car_universe,
    describe,
    generate_base_dataset,
    profile_escape_selector,
    profile_transformation,
)
from app.services.concentration import ConfidenceBudget, Objective, erasure_sample_window, union_delta
from app.services.experiment import draw_consumer_sets
from app.services.strategies import Transformation
from app.services.tabular import Feature, Universe, split_dataset


def test_cardinalities():
    """Universe sizes and per-objective confidence budgets"""
    print("=" * 80)
    print("TEST 1: Cardinalities and Budgets")
    print("=" * 80)

    universe = car_universe()
    g = profile_transformation(universe)
    print(f"\n✓ #X  = {universe.cardinality:,} (expected 2,388,787,200)")
    print(f"✓ #X~ = {g.signal_cardinality(universe)} (expected 5)")
    print(f"✓ #Y  = {universe.n_labels}")

    print("\nPer-objective delta~ at delta=0.05:")
    for objective in Objective:
        budget = ConfidenceBudget(0.05, objective, g.signal_cardinality(universe), universe.n_labels,
                                  universe.cardinality)
        print(f"  - {objective.value:12} events={budget.event_count:>15,}  delta~={union_delta(budget):.4e}")


def test_erasure_window():
    """Erasure feasibility on the full car universe"""
    print("\n" + "=" * 80)
    print("TEST 2: Erasure Sample Window")
    print("=" * 80)

    universe = car_universe()
    g = profile_transformation(universe)
    budget = ConfidenceBudget(0.05, Objective.ERASING, g.signal_cardinality(universe), universe.n_labels,
                              universe.cardinality)
    delta_tilde = union_delta(budget)
    print(f"\ndelta~ = {delta_tilde:.4e}")
    for eta in (0.02, 0.03, 0.05, 0.1):
        w = erasure_sample_window(delta_tilde, eta, 1_000_000)
        print(f"  eta={eta:<5} n_min={w.n_min:>9,}  n_max={w.n_max:>9,}  empty={w.is_empty}")
    w = erasure_sample_window(delta_tilde, 0.03, 100_000)
    print(f"\n✓ N=100,000, eta=0.03: window [{w.n_min:,}, {w.n_max:,}] (n_min expected ~59,800)")


def test_two_outcome():
    """Infinite-data bound against the earlier population bound"""
    print("\n" + "=" * 80)
    print("TEST 3: Two-Outcome Distribution (alpha = 0.25)")
    print("=" * 80)

    universe = Universe((Feature("f", ("t", "u")),), ("0", "1"))
    g = Transformation.fixing({0: 0})
    dist = PopulationDistribution.from_cells(universe, {((0,), 0): 0.3, ((0,), 1): 0.1, ((1,), 0): 0.6})
    for alpha in (0.1, 1 / 6, 0.2, 0.25, 0.5):
        ours = idr_bound(dist, g, 1, alpha).bound
        prior = prior_bound_planting(dist, g, 1, alpha)
        print(f"  alpha={alpha:.4f}  idr={ours:.4f}  prior={prior:.4f}")
    print("\n✓ Expected at alpha=0.25: idr=1.0000, prior=0.4000")


def test_dataset(rows: int = 300_000):
    """Generated dataset vs the published signal-set structure"""
    print("\n" + "=" * 80)
    print(f"TEST 4: Generated Dataset ({rows:,} rows)")
    print("=" * 80)

    base = generate_base_dataset(rows, seed=0)
    g = profile_transformation(base.universe)
    info = describe(base, g)
    print(f"\n✓ Signal-set rows: {info['signal_rows']:,} ({info['signal_share']:.2%}, published: just under 7%)")
    print("\nLabel tallies inside the signal set (generated | published share):")
    for country, counts in info["signal_labels"].items():
        total = sum(counts.values()) or 1
        ref = REFERENCE_SIGNAL_COUNTS[country]
        ref_total = sum(ref.values())
        cells = "  ".join(f"{label[:4]}={counts[label] / total:.2f}|{ref[label] / ref_total:.2f}"
                          for label in counts)
        print(f"  {country}: {cells}")
    return base


def test_bounds(base, N: int = 100_000, n: int = 50_000, N_test: int = 10_000):
    """One collective draw, every finite-sample bound"""
    print("\n" + "=" * 80)
    print(f"TEST 5: Finite-Sample Bounds (N={N:,}, n={n:,})")
    print("=" * 80)

    universe = base.universe
    g = profile_transformation(universe)
    sets = draw_consumer_sets(base, n, N, N_test, seed=0)
    params = BoundParams(N=N, N_test=N_test, n=n, n_e=max(400, n // 5))

    fl = planting_bound_fl(sets.collective, g, "Excellent", params)
    fo = planting_bound_fo(sets.collective, g, "Excellent", profile_escape_selector(universe), params)
    best, naive = naive_unplanting_bound(sets.collective, g, "Excellent", params)
    d_est, d_rest = split_dataset(sets.collective, params.n_e, seed=0)
    adaptive = unplanting_bound(d_est, d_rest, g, "Excellent", params)

    print(f"\n✓ Planting FL:        bound={fl.bound:+.4f}  cracked={fl.n_cracked}")
    print(f"✓ Planting FO:        bound={fo.bound:+.4f}  cracked={fo.n_cracked}")
    print(f"✓ Naive unplanting:   bound={naive.bound:+.4f}  label={universe.labels[best]}")
    print(f"✓ Adaptive unplanting: bound={adaptive.bound:+.4f}  cracked={adaptive.n_cracked}")
    print(f"\nR terms (FL): " + ", ".join(f"{k}={v:.4f}" for k, v in fl.r_terms.items()))


if __name__ == "__main__":
    np.set_printoptions(precision=4)
    test_cardinalities()
    test_erasure_window()
    test_two_outcome()
    base = test_dataset()
    test_bounds(base)
    print("\n" + "=" * 80)
    print("✅ Verification complete")
    print("=" * 80)
