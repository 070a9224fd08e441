"""
Lower bounds on collective success.

Finite-sample bounds (one per strategy) are computable by the collective from
its pooled data alone. Each has the same shape:

    P_outer[ (n/N)(first - 2R(n)) - ((N-n)/N)(gap + errors) - eps/(1-eps) > 0 ] - R(n) - R(N_test)

where the outer empirical measure, the `first` prevalence term, the `gap`
(how much the base population prefers another label) and the error terms
depend on the strategy. An element whose bracket is strictly positive is
"cracked" and contributes its outer mass.

Infinite-data bounds drop every R term and evaluate the same brackets on a
known population distribution, with n/N replaced by alpha.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import BoundsError, ErasurePreconditionError
from app.services.concentration import (
    ConfidenceBudget,
    Objective,
    erasure_sample_window,
    hoeffding_term,
    union_delta,
)
from app.services.strategies import (
    EscapeSelector,
    LabelTable,
    MAX_SIGNAL_ENUMERATION,
    Transformation,
    apply_feature_label,
    apply_feature_only,
    apply_unplanting,
    estimate_erasure_labels,
    estimate_unplant_labels,
    signal_keys,
)
from app.services.tabular import (
    Dataset,
    DatasetRole,
    FeatureVector,
    JointCounts,
    Universe,
    empirical_joint,
)

logger = logging.getLogger(__name__)

DISTRIBUTION_TOLERANCE = 1e-12


@dataclass(frozen=True)
class BoundParams:
    N: int
    N_test: int
    n: int
    n_e: Optional[int] = None
    delta: float = 0.05
    epsilon: float = 0.0
    eta: Optional[float] = None

    def __post_init__(self):
        if self.N_test < 1:
            raise BoundsError(f"N_test must be >= 1, got {self.N_test}")
        if not 0 < self.n < self.N:
            raise BoundsError(f"collective size must satisfy 0 < n < N, got n={self.n}, N={self.N}")
        if self.n_e is not None and not 0 < self.n_e < self.n:
            raise BoundsError(f"estimation split must satisfy 0 < n_e < n, got n_e={self.n_e}, n={self.n}")
        if not 0.0 < self.delta <= 1.0:
            raise BoundsError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0.0 <= self.epsilon < 1.0:
            raise BoundsError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.eta is not None and self.eta <= 0:
            raise BoundsError(f"eta must be positive, got {self.eta}")

    @property
    def epsilon_term(self) -> float:
        return self.epsilon / (1.0 - self.epsilon)


@dataclass(frozen=True)
class FeatureVerdict:
    feature: FeatureVector
    weight: float
    margin: float
    cracked: bool


@dataclass
class BoundReport:
    objective: Objective
    bound: float
    bound_clamped: float
    delta_tilde: Optional[float]
    r_terms: Dict[str, float]
    per_feature: List[FeatureVerdict]
    epsilon_term: float
    target: Optional[int] = None
    n: Optional[int] = None
    labels: Dict[FeatureVector, int] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def n_cracked(self) -> int:
        return sum(1 for v in self.per_feature if v.cracked)

    @property
    def cracked_features(self) -> frozenset:
        return frozenset(v.feature for v in self.per_feature if v.cracked)

    def to_dict(self, universe: Optional[Universe] = None) -> Dict:
        def fmt_x(x):
            return universe.vector_names(x) if universe else list(x)

        def fmt_y(y):
            return universe.labels[y] if (universe and y is not None) else y

        return {
            "objective": self.objective.value,
            "target": fmt_y(self.target),
            "n": self.n,
            "bound": self.bound,
            "bound_clamped": self.bound_clamped,
            "delta_tilde": self.delta_tilde,
            "epsilon_term": self.epsilon_term,
            "r_terms": dict(self.r_terms),
            "n_cracked": self.n_cracked,
            "per_feature": [
                {"feature": fmt_x(v.feature), "weight": v.weight, "margin": v.margin, "cracked": v.cracked}
                for v in self.per_feature
            ],
            "labels": [{"feature": fmt_x(x), "label": fmt_y(y)} for x, y in self.labels.items()],
            "warnings": list(self.warnings),
        }

    def to_json(self, universe: Optional[Universe] = None) -> str:
        return json.dumps(self.to_dict(universe), indent=2)

    def csv_row(self) -> Dict[str, Union[int, float, None]]:
        return {
            "n": self.n,
            "bound": self.bound,
            "bound_clamped": self.bound_clamped,
            "delta_tilde": self.delta_tilde,
            "R_n": self.r_terms.get("R(n)"),
            "R_Nmn": self.r_terms.get("R(N-n)"),
            "R_Ntest": self.r_terms.get("R(N_test)"),
            "n_cracked": self.n_cracked,
        }


def _verdicts(universe: Universe, keys: np.ndarray, weights: np.ndarray,
              margins: np.ndarray) -> List[FeatureVerdict]:
    decoded = universe.decode(keys).tolist()
    return [
        FeatureVerdict(tuple(x), float(w), float(m), bool(m > 0))
        for x, w, m in zip(decoded, weights.tolist(), margins.tolist())
    ]


def indicator_bound(objective: Objective, universe: Universe, keys: np.ndarray,
                    outer_counts: np.ndarray, first: np.ndarray, gap: np.ndarray,
                    errors: Sequence[float], params: BoundParams, delta_tilde: float,
                    r_terms: Dict[str, float]) -> BoundReport:
    """
    Shared finite-sample evaluation. `keys` are in canonical order;
    `outer_counts` are integer outer-measure counts out of params.n; `errors`
    are the terms added to `gap` inside the non-collective bracket, in order.
    """
    n, N = params.n, params.N
    r_n = r_terms["R(n)"]
    inner = gap.astype(np.float64)
    for e in errors:
        inner = inner + e
    margins = (n / N) * (first - 2.0 * r_n) - ((N - n) / N) * inner - params.epsilon_term
    cracked = margins > 0
    cracked_mass = int(outer_counts[cracked].sum()) / n
    bound = cracked_mass - r_n - r_terms["R(N_test)"]
    weights = outer_counts / n
    return BoundReport(
        objective=objective,
        bound=bound,
        bound_clamped=max(bound, 0.0),
        delta_tilde=delta_tilde,
        r_terms=dict(r_terms),
        per_feature=_verdicts(universe, keys, weights, margins),
        epsilon_term=params.epsilon_term,
        n=n,
    )


def _budget(params: BoundParams, objective: Objective, universe: Universe, g: Transformation) -> float:
    budget = ConfidenceBudget(
        delta=params.delta,
        objective=objective,
        card_signal=g.signal_cardinality(universe),
        card_labels=universe.n_labels,
        card_features=universe.cardinality,
    )
    return union_delta(budget)


def _check_collective(d_collective: Dataset, params: BoundParams) -> None:
    if len(d_collective) != params.n:
        raise BoundsError(f"collective dataset has {len(d_collective)} samples, params say n={params.n}")


def _gap_against(probs: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """max over y' != ref of P(., y') minus P(., ref), row by row."""
    rows = np.arange(probs.shape[0])
    others = probs.copy()
    others[rows, reference] = -np.inf
    return others.max(axis=1) - probs[rows, reference]


def _standard_r_terms(delta_tilde: float, params: BoundParams) -> Dict[str, float]:
    return {
        "R(n)": hoeffding_term(delta_tilde, params.n),
        "R(N-n)": hoeffding_term(delta_tilde, params.N - params.n),
        "R(N_test)": hoeffding_term(delta_tilde, params.N_test),
    }


def planting_bound_fl(d_collective: Dataset, g: Transformation, y_star: int,
                      params: BoundParams) -> BoundReport:
    """Lower bound for the feature-label strategy h(x, y) = (g(x), y*)."""
    _check_collective(d_collective, params)
    universe = d_collective.universe
    y_star = universe.label_index(y_star)
    delta_tilde = _budget(params, Objective.PLANTING_FL, universe, g)
    r = _standard_r_terms(delta_tilde, params)
    n = params.n

    counts = empirical_joint(d_collective)
    modified = empirical_joint(apply_feature_label(d_collective, g, y_star))
    keys = modified.feature_keys
    outer = modified.feature_counts
    first = outer / n
    probs = counts.label_counts_for(keys) / n
    gap = _gap_against(probs, np.full(keys.shape[0], y_star))

    report = indicator_bound(Objective.PLANTING_FL, universe, keys, outer, first, gap,
                             [2.0 * r["R(n)"], 2.0 * r["R(N-n)"]], params, delta_tilde, r)
    report.target = y_star
    return report


def planting_bound_fo(d_collective: Dataset, g: Transformation, y_star: int,
                      escape_selector: Optional[EscapeSelector], params: BoundParams) -> BoundReport:
    """
    Lower bound for the feature-only strategy. The outer measure runs over the
    raw collective data x' ~ D(n); the indicator only depends on g(x'), so x'
    are grouped by their image.
    """
    _check_collective(d_collective, params)
    universe = d_collective.universe
    y_star = universe.label_index(y_star)
    delta_tilde = _budget(params, Objective.PLANTING_FO, universe, g)
    r = _standard_r_terms(delta_tilde, params)
    n = params.n

    counts = empirical_joint(d_collective)
    modified = empirical_joint(apply_feature_only(d_collective, g, y_star, escape_selector))
    keys, outer = np.unique(g.image_keys(universe, d_collective.features), return_counts=True)
    first = modified.label_counts_for(keys)[:, y_star] / n
    probs = counts.label_counts_for(keys) / n
    gap = _gap_against(probs, np.full(keys.shape[0], y_star))

    report = indicator_bound(Objective.PLANTING_FO, universe, keys, outer, first, gap,
                             [2.0 * r["R(n)"], 2.0 * r["R(N-n)"]], params, delta_tilde, r)
    report.target = y_star
    return report


def unplanting_bound(d_estimation: Dataset, d_rest: Dataset, g: Transformation, y_star: int,
                     params: BoundParams, sharp: bool = False) -> BoundReport:
    """
    Lower bound for the adaptive unplanting strategy. Labels y^_x~ come from
    the estimation split; the gap is measured on the remaining n - n_e samples.

    sharp=True measures P(x~, y*) on all n samples instead, trading
    2R(n - n_e) for R(n) + R(n - n_e).
    """
    if params.n_e is None:
        raise BoundsError("unplanting needs n_e")
    if len(d_estimation) != params.n_e or len(d_rest) != params.n - params.n_e:
        raise BoundsError(
            f"split sizes ({len(d_estimation)}, {len(d_rest)}) inconsistent with "
            f"n_e={params.n_e}, n-n_e={params.n - params.n_e}"
        )
    universe = d_estimation.universe
    y_star = universe.label_index(y_star)
    delta_tilde = _budget(params, Objective.UNPLANTING, universe, g)
    r = _standard_r_terms(delta_tilde, params)
    r["R(n-n_e)"] = hoeffding_term(delta_tilde, params.n - params.n_e)
    n, n_rest = params.n, params.n - params.n_e

    table = estimate_unplant_labels(d_estimation, g, y_star)
    pooled = Dataset.concat([d_estimation, d_rest.with_role(DatasetRole.COLLECTIVE)], DatasetRole.COLLECTIVE)
    modified = empirical_joint(apply_unplanting(pooled, g, table))
    keys = modified.feature_keys
    outer = modified.feature_counts
    first = outer / n
    y_hat = table.lookup(keys)
    rows = np.arange(keys.shape[0])
    rest_probs = empirical_joint(d_rest).label_counts_for(keys) / n_rest
    if sharp:
        pooled_probs = empirical_joint(pooled).label_counts_for(keys) / n
        gap = pooled_probs[:, y_star] - rest_probs[rows, y_hat]
        errors = [r["R(n)"], r["R(n-n_e)"], 2.0 * r["R(N-n)"]]
    else:
        gap = rest_probs[:, y_star] - rest_probs[rows, y_hat]
        errors = [2.0 * r["R(n-n_e)"], 2.0 * r["R(N-n)"]]

    report = indicator_bound(Objective.UNPLANTING, universe, keys, outer, first, gap,
                             errors, params, delta_tilde, r)
    report.target = y_star
    report.labels = {universe.decode_key(int(k)): int(y) for k, y in zip(keys.tolist(), y_hat.tolist())}
    # enumerated tables flag unseen elements; image-keyed tables lack them entirely
    unseen = len(table.defaulted) + len(table.missing(keys))
    if unseen:
        default = universe.labels[table.default_label]
        msg = f"{unseen} signal-set elements unseen in the estimation split; labelled {default}"
        logger.warning(f"⚠️ {msg}")
        report.warnings.append(msg)
    return report


def naive_unplanting_bound(d_collective: Dataset, g: Transformation, y_star: int,
                           params: BoundParams) -> Tuple[int, BoundReport]:
    """
    Plant the single label y' != y* with the best feature-label bound.
    Ties go to the lowest label index.
    """
    universe = d_collective.universe
    y_star = universe.label_index(y_star)
    best_label, best_report = None, None
    for y in range(universe.n_labels):
        if y == y_star:
            continue
        report = planting_bound_fl(d_collective, g, y, params)
        logger.debug(f"naive unplanting candidate {universe.labels[y]}: bound={report.bound:.6f}")
        if best_report is None or report.bound > best_report.bound:
            best_label, best_report = y, report
    if best_report is None:
        raise BoundsError("unplanting needs a label other than y*")
    return best_label, best_report


def erasing_bound(d_collective: Dataset, g: Transformation, params: BoundParams) -> BoundReport:
    """
    Lower bound for the erasure strategy h(x, y) = (x, y*_{g(x)}). Valid only
    when n lies in the erasure sample window for the A1 margin params.eta.
    """
    _check_collective(d_collective, params)
    if params.eta is None:
        raise BoundsError("erasing needs the A1 margin eta")
    universe = d_collective.universe
    delta_tilde = _budget(params, Objective.ERASING, universe, g)
    window = erasure_sample_window(delta_tilde, params.eta, params.N)
    if not window.contains(params.n):
        raise ErasurePreconditionError(params.n, window)
    r = _standard_r_terms(delta_tilde, params)
    n = params.n

    counts = empirical_joint(d_collective)
    table = estimate_erasure_labels(d_collective, g, counts)
    keys = counts.feature_keys
    outer = counts.feature_counts
    first = outer / n
    targets = table.lookup(g.image_keys(universe, universe.decode(keys)))
    probs = counts.label_matrix / n
    gap = _gap_against(probs, targets)

    report = indicator_bound(Objective.ERASING, universe, keys, outer, first, gap,
                             [2.0 * r["R(n)"], 2.0 * r["R(N-n)"]], params, delta_tilde, r)
    report.labels = table.as_dict()
    if len(table.defaulted):
        report.warnings.append(f"{len(table.defaulted)} signal-set elements unseen in the collective data")
    return report


class PopulationDistribution:
    """A known distribution over X x Y (sparse: listed cells only)."""

    def __init__(self, universe: Universe, keys: np.ndarray, labels: np.ndarray, probs: np.ndarray):
        keys = np.asarray(keys, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        probs = np.asarray(probs, dtype=np.float64)
        if (probs < 0).any():
            raise BoundsError("probabilities must be non-negative")
        total = math.fsum(probs.tolist())
        if abs(total - 1.0) > DISTRIBUTION_TOLERANCE:
            raise BoundsError(f"probabilities sum to {total!r}, not 1")
        if labels.size and (labels.min() < 0 or labels.max() >= universe.n_labels):
            raise BoundsError("label index out of range")
        self.universe = universe
        n_labels = universe.n_labels
        fkeys, inverse = np.unique(keys, return_inverse=True)
        matrix = np.zeros((fkeys.shape[0], n_labels), dtype=np.float64)
        np.add.at(matrix, (inverse, labels), probs)
        self.feature_keys = fkeys
        self.matrix = matrix

    @classmethod
    def from_cells(cls, universe: Universe, cells: Mapping[Tuple[Sequence[int], int], float]) -> "PopulationDistribution":
        keys, labels, probs = [], [], []
        for (x, y), p in cells.items():
            keys.append(universe.encode_vector(universe.validate_vector(x)))
            labels.append(universe.label_index(y))
            probs.append(float(p))
        return cls(universe, np.array(keys, dtype=np.int64), np.array(labels, dtype=np.int64), np.array(probs))

    @classmethod
    def from_counts(cls, counts: JointCounts) -> "PopulationDistribution":
        return cls(counts.universe, counts.keys, counts.cell_labels, counts.counts / counts.total)

    @property
    def cells(self) -> Dict[Tuple[FeatureVector, int], float]:
        out = {}
        for x, row in zip(self.universe.decode(self.feature_keys).tolist(), self.matrix.tolist()):
            for y, p in enumerate(row):
                if p > 0:
                    out[(tuple(x), y)] = p
        return out

    def rows_for(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        out = np.zeros((keys.shape[0], self.universe.n_labels), dtype=np.float64)
        if self.feature_keys.shape[0] == 0 or keys.shape[0] == 0:
            return out
        pos = np.clip(np.searchsorted(self.feature_keys, keys), 0, self.feature_keys.shape[0] - 1)
        hit = self.feature_keys[pos] == keys
        out[hit] = self.matrix[pos[hit]]
        return out

    def pushforward(self, g: Transformation) -> Tuple[np.ndarray, np.ndarray]:
        """(x~ keys, P_D(g(x) = x~)) over images with positive mass, canonical order."""
        mass = self.matrix.sum(axis=1)
        images = g.image_keys(self.universe, self.universe.decode(self.feature_keys))
        keys, inverse = np.unique(images, return_inverse=True)
        weights = np.bincount(inverse, weights=mass, minlength=keys.shape[0])
        keep = weights > 0
        return keys[keep], weights[keep]

    def pushforward_label(self, g: Transformation, keys: np.ndarray, y: int) -> np.ndarray:
        """P_D(g(x) = x~, y) for the given x~ keys."""
        images = g.image_keys(self.universe, self.universe.decode(self.feature_keys))
        out = np.zeros(keys.shape[0], dtype=np.float64)
        pos = np.searchsorted(keys, images)
        pos = np.clip(pos, 0, max(keys.shape[0] - 1, 0))
        hit = keys[pos] == images if keys.shape[0] else np.zeros(images.shape[0], dtype=bool)
        np.add.at(out, pos[hit], self.matrix[hit, y])
        return out


def _check_alpha(alpha: float, epsilon: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise BoundsError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 <= epsilon < 1.0:
        raise BoundsError(f"epsilon must lie in [0, 1), got {epsilon}")


def _exact_argmax(rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Argmax per row (lowest index on ties) and whether the maximum is strict."""
    best = np.argmax(rows, axis=1)
    ordered = np.sort(rows, axis=1)
    strict = ordered[:, -1] > ordered[:, -2]
    return best, strict


def idr_bound(dist: PopulationDistribution, g: Transformation,
              target: Union[int, LabelTable, None], alpha: float, epsilon: float = 0.0,
              objective: Objective = Objective.PLANTING_FL) -> BoundReport:
    """
    Infinite-data bound: no R terms, no union budget, alpha = lim n/N.

    target is y* for planting and unplanting; for erasing it is either a
    LabelTable of y*_x~ or None (computed exactly from dist).
    """
    _check_alpha(alpha, epsilon)
    objective = Objective(objective)
    universe = dist.universe
    eps_term = epsilon / (1.0 - epsilon)
    warnings: List[str] = []
    labels: Dict[FeatureVector, int] = {}
    y_star = None

    if objective == Objective.ERASING:
        keys = dist.feature_keys
        weights = dist.matrix.sum(axis=1)
        keep = weights > 0
        keys, weights = keys[keep], weights[keep]
        rows = dist.matrix[keep]
        images = g.image_keys(universe, universe.decode(keys))
        if isinstance(target, LabelTable):
            targets = target.lookup(images)
        else:
            uniq = np.unique(images)
            best, strict = _exact_argmax(dist.rows_for(uniq))
            if not strict.all():
                msg = f"{int((~strict).sum())} signal-set elements have no strict top label (A1 margin degenerate)"
                logger.warning(f"⚠️ {msg}")
                warnings.append(msg)
            labels = {universe.decode_key(int(k)): int(y) for k, y in zip(uniq.tolist(), best.tolist())}
            targets = best[np.searchsorted(uniq, images)]
        first = weights
        gap = _gap_against(rows, targets)
    else:
        if isinstance(target, LabelTable) or target is None:
            raise BoundsError(f"{objective.value} needs a target label")
        y_star = universe.label_index(target)
        keys, weights = dist.pushforward(g)
        rows = dist.rows_for(keys)
        if objective == Objective.PLANTING_FL:
            first = weights
            gap = _gap_against(rows, np.full(keys.shape[0], y_star))
        elif objective == Objective.PLANTING_FO:
            first = dist.pushforward_label(g, keys, y_star)
            gap = _gap_against(rows, np.full(keys.shape[0], y_star))
        else:
            restricted = rows.copy()
            restricted[:, y_star] = -np.inf
            y_alt = np.argmax(restricted, axis=1)
            first = weights
            gap = rows[:, y_star] - rows[np.arange(keys.shape[0]), y_alt]
            labels = {universe.decode_key(int(k)): int(y) for k, y in zip(keys.tolist(), y_alt.tolist())}

    margins = alpha * first - (1.0 - alpha) * gap - eps_term
    cracked = margins > 0
    bound = float(weights[cracked].sum())
    return BoundReport(
        objective=objective,
        bound=bound,
        bound_clamped=max(bound, 0.0),
        delta_tilde=None,
        r_terms={},
        per_feature=_verdicts(universe, keys, weights, margins),
        epsilon_term=eps_term,
        target=y_star,
        labels=labels,
        warnings=warnings,
    )


def prior_bound_planting(dist: PopulationDistribution, g: Transformation, y_star: int, alpha: float) -> float:
    """
    The earlier population-level planting bound
        1 - ((1 - alpha)/alpha) * P(X~) * max_x~ max_y (P(y|x~) - P(y*|x~)),
    with the max over signal-set elements of positive mass. Returns 1 when
    there are none.
    """
    _check_alpha(alpha, 0.0)
    universe = dist.universe
    y_star = universe.label_index(y_star)
    mass = dist.matrix.sum(axis=1)
    in_signal = g.in_signal_set(universe.decode(dist.feature_keys)) & (mass > 0)
    if not in_signal.any():
        return 1.0
    rows = dist.matrix[in_signal]
    px = mass[in_signal]
    worst = float(((rows.max(axis=1) - rows[:, y_star]) / px).max())
    signal_mass = float(px.sum())
    return min(1.0 - ((1.0 - alpha) / alpha) * signal_mass * worst, 1.0)


def idr_curve(dist: PopulationDistribution, g: Transformation, target, alphas: Sequence[float],
              objective: Objective = Objective.PLANTING_FL, epsilon: float = 0.0) -> List[BoundReport]:
    return [idr_bound(dist, g, target, float(a), epsilon, objective) for a in alphas]


def prior_curve(dist: PopulationDistribution, g: Transformation, y_star: int,
                alphas: Sequence[float]) -> List[float]:
    return [prior_bound_planting(dist, g, y_star, float(a)) for a in alphas]


def a1_margin(source: Union[PopulationDistribution, JointCounts], g: Transformation) -> float:
    """
    Observed eta: the smallest gap, over signal-set elements, between the top
    joint probability and the runner-up. Zero when some x~ has no strict winner.
    """
    if isinstance(source, JointCounts):
        source = PopulationDistribution.from_counts(source)
    universe = source.universe
    if g.signal_cardinality(universe) <= MAX_SIGNAL_ENUMERATION:
        keys = signal_keys(g, universe)
    else:
        keys, _ = source.pushforward(g)
    rows = np.sort(source.rows_for(keys), axis=1)
    return float((rows[:, -1] - rows[:, -2]).min())
