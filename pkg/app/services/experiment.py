"""
Config-driven sweeps: for every (N, seed, n[, n_e]) cell draw fresh consumer
sets from the base dataset, play the strategy, compute the collective's lower
bound, fit the platform and measure the true success.
"""
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator

from app.core.config import settings
from app.core.errors import BoundsError, ErasurePreconditionError, ResultsError, SplitError
from app.services.bounds import (
    BoundParams,
    PopulationDistribution,
    a1_margin,
    erasing_bound,
    naive_unplanting_bound,
    planting_bound_fl,
    planting_bound_fo,
    unplanting_bound,
)
from app.services.car_datagen import (
    GeneratorConfig,
    car_universe,
    generate_base_dataset,
    profile_escape_selector,
    profile_transformation,
)
from app.services.platform_sim import (
    SuccessObjective,
    assemble_training,
    evaluate_success,
    fit_argmax_classifier,
)
from app.services.strategies import (
    EscapeSelector,
    Transformation,
    apply_erasure,
    apply_feature_label,
    apply_feature_only,
    apply_unplanting,
    estimate_erasure_labels,
    estimate_unplant_labels,
)
from app.services.tabular import Dataset, DatasetRole, Universe, empirical_joint, split_dataset

logger = logging.getLogger(__name__)


class Strategy(str, Enum):
    PLANT_FL = "plant-fl"
    PLANT_FO = "plant-fo"
    UNPLANT_NAIVE = "unplant-naive"
    UNPLANT_ADAPTIVE = "unplant-adaptive"
    ERASE = "erase"


class DatasetSource(BaseModel):
    """Where the base dataset comes from: a CSV file, or the car generator."""
    csv: Optional[str] = None
    universe: Optional[str] = None  # JSON universe file for non-car CSVs
    rows: int = Field(default_factory=lambda: settings.BASE_ROWS, ge=1)
    seed: int = Field(default_factory=lambda: settings.SEED)
    generator: Optional[str] = None
    features: Optional[List[str]] = None


class ExperimentConfig(BaseModel):
    objective: Strategy = Strategy.PLANT_FL
    target: str = "Excellent"
    naive_target: Optional[str] = None
    sharp: bool = False
    escape: Literal["flip", "constant"] = "flip"
    g: Optional[Dict[str, str]] = None
    N: Union[int, List[int]] = Field(default_factory=lambda: settings.N)
    N_test: int = Field(default_factory=lambda: settings.N_TEST, ge=1)
    n_grid: List[int]
    n_e: Union[int, List[int]] = Field(default_factory=lambda: settings.NE)
    ne_fraction: Optional[float] = Field(None, gt=0.0, lt=1.0)
    ne_floor: int = 0
    delta: float = Field(default_factory=lambda: settings.DELTA)
    epsilon: float = Field(default_factory=lambda: settings.EPSILON)
    eta: Optional[float] = None
    seeds: List[int] = Field(default_factory=lambda: [settings.SEED])
    dataset: DatasetSource = Field(default_factory=DatasetSource)
    out: Optional[str] = None
    format: Literal["csv", "json"] = "csv"
    threads: Optional[int] = None

    @field_validator("n_grid", "seeds")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("must not be empty")
        return v

    @property
    def N_values(self) -> List[int]:
        return [self.N] if isinstance(self.N, int) else list(self.N)

    def ne_values(self, n: int) -> List[Optional[int]]:
        if self.objective != Strategy.UNPLANT_ADAPTIVE:
            return [None]
        if self.ne_fraction is not None:
            return [max(self.ne_floor, int(n * self.ne_fraction))]
        return [self.n_e] if isinstance(self.n_e, int) else list(self.n_e)


ROW_COLUMNS = ["seed", "N", "n", "n_e", "target", "bound", "bound_clamped",
               "delta_tilde", "success", "n_cracked"]


@dataclass
class SweepRow:
    seed: int
    N: int
    n: int
    n_e: Optional[int]
    target: str
    bound: float
    bound_clamped: float
    delta_tilde: float
    success: float
    n_cracked: int
    # kept in memory and in the results store, never in emitted files
    wall_time: float = field(default=0.0, compare=False)

    def to_record(self) -> Dict:
        out = asdict(self)
        out.pop("wall_time")
        return out


@dataclass(frozen=True)
class SkippedCell:
    seed: int
    N: int
    n: int
    n_e: Optional[int]
    reason: str


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: List[SweepRow] = field(default_factory=list)
    skipped: List[SkippedCell] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return rows_to_frame(self.rows)


@dataclass(frozen=True)
class ConsumerSets:
    collective: Dataset
    rest: Dataset
    test: Dataset


def draw_consumer_sets(base: Dataset, n: int, N: int, N_test: int, seed: int) -> ConsumerSets:
    """D(n), D(N-n) and D_test drawn jointly without replacement; depends on (seed, N, n) only."""
    if not 0 < n < N:
        raise SplitError(f"collective size must satisfy 0 < n < N, got n={n}, N={N}")
    if N + N_test > len(base):
        raise SplitError(f"base dataset has {len(base)} rows, need N + N_test = {N + N_test}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, N, n]))
    idx = rng.choice(len(base), size=N + N_test, replace=False)
    return ConsumerSets(
        collective=base.take(idx[:n], DatasetRole.COLLECTIVE),
        rest=base.take(idx[n:N], DatasetRole.NON_COLLECTIVE),
        test=base.take(idx[N:], DatasetRole.TEST),
    )


def load_base(source: DatasetSource, threads: Optional[int] = None) -> Dataset:
    if source.csv:
        universe = (Universe.from_dict(json.loads(Path(source.universe).read_text()))
                    if source.universe else car_universe())
        base = Dataset.read_csv(universe, source.csv)
        logger.info(f"Loaded base dataset ({len(base):,} rows) from {source.csv}")
    else:
        gen = GeneratorConfig.from_json(source.generator) if source.generator else GeneratorConfig()
        base = generate_base_dataset(source.rows, source.seed, gen.rubric, gen.sampler, threads=threads)
    if source.features:
        base = base.project(source.features)
    return base


def resolve_transformation(universe: Universe, fix: Optional[Dict[str, str]] = None) -> Transformation:
    """Fixing map from feature name to category; None means the profile transformation."""
    if fix is None:
        return profile_transformation(universe)
    return Transformation.from_json(universe, json.dumps({"fix": fix}))


def escape_selector(universe: Universe, mode: str = "flip") -> EscapeSelector:
    if mode == "constant":
        return profile_escape_selector(universe)
    return EscapeSelector.flip()


def run_cell(config: ExperimentConfig, base: Dataset, g: Transformation, seed: int, N: int, n: int,
             n_e: Optional[int], eta: Optional[float]) -> SweepRow:
    """One (seed, N, n, n_e) run. Raises on infeasible cells."""
    start = time.perf_counter()
    universe = base.universe
    y_star = universe.label_index(config.target)
    params = BoundParams(N=N, N_test=config.N_test, n=n, n_e=n_e, delta=config.delta,
                         epsilon=config.epsilon, eta=eta)
    sets = draw_consumer_sets(base, n, N, config.N_test, seed)
    D = sets.collective
    objective = config.objective
    success_target: Optional[int] = y_star
    target_name = universe.labels[y_star]

    if objective == Strategy.PLANT_FL:
        report = planting_bound_fl(D, g, y_star, params)
        modified = apply_feature_label(D, g, y_star)
        success_objective = SuccessObjective.PLANTING
    elif objective == Strategy.PLANT_FO:
        selector = escape_selector(universe, config.escape)
        report = planting_bound_fo(D, g, y_star, selector, params)
        modified = apply_feature_only(D, g, y_star, selector)
        success_objective = SuccessObjective.PLANTING
    elif objective == Strategy.UNPLANT_NAIVE:
        if config.naive_target is not None:
            planted = universe.label_index(config.naive_target)
            if planted == y_star:
                raise BoundsError("the naive strategy plants a label other than y*")
            report = planting_bound_fl(D, g, planted, params)
        else:
            planted, report = naive_unplanting_bound(D, g, y_star, params)
        modified = apply_feature_label(D, g, planted)
        success_objective = SuccessObjective.UNPLANTING
        target_name = universe.labels[planted]
    elif objective == Strategy.UNPLANT_ADAPTIVE:
        split_seed = int(np.random.SeedSequence([seed, N, n, n_e]).generate_state(1)[0])
        d_est, d_rest = split_dataset(D, n_e, split_seed)
        report = unplanting_bound(d_est, d_rest, g, y_star, params, sharp=config.sharp)
        table = estimate_unplant_labels(d_est, g, y_star)
        modified = apply_unplanting(D, g, table)
        success_objective = SuccessObjective.UNPLANTING
    else:
        report = erasing_bound(D, g, params)
        table = estimate_erasure_labels(D, g)
        modified = apply_erasure(D, g, table)
        success_objective = SuccessObjective.ERASING
        success_target = None
        target_name = ""

    classifier = fit_argmax_classifier(assemble_training(modified, sets.rest))
    success = evaluate_success(classifier, sets.test, g, success_objective, success_target)
    elapsed = time.perf_counter() - start
    logger.debug(f"cell seed={seed} N={N} n={n} n_e={n_e}: bound={report.bound:.6f} "
                 f"success={success:.6f} ({elapsed:.2f}s)")
    return SweepRow(seed=seed, N=N, n=n, n_e=n_e, target=target_name, bound=report.bound,
                    bound_clamped=report.bound_clamped, delta_tilde=report.delta_tilde,
                    success=success, n_cracked=report.n_cracked, wall_time=elapsed)


def measure_eta(base: Dataset, g: Transformation) -> float:
    eta = a1_margin(PopulationDistribution.from_counts(empirical_joint(base)), g)
    logger.info(f"A1 margin measured on the base dataset: eta={eta:.6g}")
    return eta


def run_sweep(config: ExperimentConfig, base: Optional[Dataset] = None,
              g: Optional[Transformation] = None) -> SweepResult:
    threads = max(1, min(config.threads or settings.COLLUSION_THREADS, settings.COLLUSION_THREADS))
    base = base if base is not None else load_base(config.dataset, threads)
    g = g or resolve_transformation(base.universe, config.g)
    eta = config.eta
    if config.objective == Strategy.ERASE and eta is None:
        eta = measure_eta(base, g)
        if eta <= 0:
            logger.warning("⚠️ A1 margin is zero on the base dataset; every erasing cell will be skipped")

    cells: List[Tuple[int, int, int, Optional[int]]] = [
        (seed, N, n, n_e)
        for N in config.N_values
        for seed in config.seeds
        for n in config.n_grid
        for n_e in config.ne_values(n)
    ]
    logger.info(f"Running {len(cells)} cell(s), objective={config.objective.value}, threads={threads}")

    def run(cell):
        seed, N, n, n_e = cell
        try:
            if eta is not None and eta <= 0:
                raise BoundsError("A1 margin eta must be positive for erasing")
            return run_cell(config, base, g, seed, N, n, n_e, eta)
        except (ErasurePreconditionError, BoundsError, SplitError) as e:
            logger.warning(f"⚠️ Skipping cell seed={seed} N={N} n={n} n_e={n_e}: {e}")
            return SkippedCell(seed, N, n, n_e, str(e))

    with ThreadPoolExecutor(max_workers=threads) as pool:
        outcomes = list(pool.map(run, cells))

    result = SweepResult(config=config)
    for outcome in outcomes:
        (result.skipped if isinstance(outcome, SkippedCell) else result.rows).append(outcome)
    order = lambda r: (r.seed, r.N, r.n, -1 if r.n_e is None else r.n_e)
    result.rows.sort(key=order)
    result.skipped.sort(key=order)
    logger.info(f"✅ Sweep done: {len(result.rows)} row(s), {len(result.skipped)} skipped")
    return result


def rows_to_frame(rows: Sequence[SweepRow]) -> pd.DataFrame:
    df = pd.DataFrame([r.to_record() for r in rows], columns=ROW_COLUMNS)
    df["n_e"] = df["n_e"].astype("Int64")
    return df


def _rows_of(table: Union[SweepResult, Sequence[SweepRow]]) -> List[SweepRow]:
    return list(table.rows if isinstance(table, SweepResult) else table)


def emit_results(table: Union[SweepResult, Sequence[SweepRow]], path: Union[str, Path],
                 fmt: str = "csv") -> None:
    """
    CSV: header ROW_COLUMNS, floats with 17 significant digits.
    JSON: array of objects, floats in shortest round-trip form.
    path "-" writes to stdout.
    """
    rows = _rows_of(table)
    if not rows:
        raise ResultsError("no sweep rows to emit")
    if fmt not in ("csv", "json"):
        raise ResultsError(f"unknown format '{fmt}'")
    if fmt == "csv":
        text = rows_to_frame(rows).to_csv(index=False, float_format="%.17g", lineterminator="\n")
    else:
        text = json.dumps([r.to_record() for r in rows], indent=2) + "\n"
    if str(path) == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as e:
        raise ResultsError(f"cannot write results to {path}: {e}") from e
    logger.info(f"Wrote {len(rows)} row(s) to {path}")


def read_results(path: Union[str, Path], fmt: Optional[str] = None) -> List[SweepRow]:
    fmt = fmt or ("json" if str(path).endswith(".json") else "csv")
    if fmt == "json":
        return [SweepRow(**rec) for rec in json.loads(Path(path).read_text())]
    df = pd.read_csv(path, float_precision="round_trip", keep_default_na=False,
                     na_values={"n_e": [""]}, dtype={"n_e": "Int64", "target": str})
    rows = []
    for rec in df.to_dict(orient="records"):
        n_e = rec["n_e"]
        rows.append(SweepRow(
            seed=int(rec["seed"]), N=int(rec["N"]), n=int(rec["n"]),
            n_e=None if pd.isna(n_e) else int(n_e), target=rec["target"],
            bound=float(rec["bound"]), bound_clamped=float(rec["bound_clamped"]),
            delta_tilde=float(rec["delta_tilde"]), success=float(rec["success"]),
            n_cracked=int(rec["n_cracked"]),
        ))
    return rows


def store_results(result: SweepResult, session) -> int:
    """Persist one run and its rows; returns the run id."""
    from app.db.models import SweepRowRecord, SweepRun

    run = SweepRun(
        objective=result.config.objective.value,
        target=result.config.target,
        config_json=result.config.model_dump_json(),
        n_rows=len(result.rows),
        n_skipped=len(result.skipped),
    )
    session.add(run)
    session.flush()
    for r in result.rows:
        session.add(SweepRowRecord(
            run_id=run.id, seed=r.seed, N=r.N, n=r.n, n_e=r.n_e, target=r.target,
            bound=r.bound, bound_clamped=r.bound_clamped, delta_tilde=r.delta_tilde,
            success=r.success, n_cracked=r.n_cracked, wall_time=r.wall_time,
        ))
    session.commit()
    logger.info(f"Stored sweep run {run.id} ({len(result.rows)} rows)")
    return run.id
