"""
Command-line entry point.

    python -m app.cli generate --rows 3000000 --seed 0 --out cars.csv
    python -m app.cli describe --data cars.csv
    python -m app.cli sweep --objective plant-fl --N 100000 --Ntest 10000 --n-grid 1000 5000 --out sweep.csv
    python -m app.cli bounds --data collective.csv --objective unplant-adaptive --N 1000000 --ne 2000
    python -m app.cli compare-idr --data cars.csv --out idr.csv

Logs go to stderr; results go to --out (or stdout).
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import CollusionError
from app.services.bounds import (
    BoundParams,
    PopulationDistribution,
    erasing_bound,
    idr_curve,
    naive_unplanting_bound,
    planting_bound_fl,
    planting_bound_fo,
    prior_curve,
    unplanting_bound,
)
from app.services.car_datagen import GeneratorConfig, describe, generate_base_dataset
from app.services.concentration import Objective
from app.services.experiment import (
    DatasetSource,
    ExperimentConfig,
    Strategy,
    emit_results,
    escape_selector,
    load_base,
    measure_eta,
    resolve_transformation,
    run_sweep,
    store_results,
)
from app.services.tabular import DatasetRole, empirical_joint, split_dataset

logger = logging.getLogger("app.cli")

STRATEGIES = [s.value for s in Strategy]


def _add_source_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset CSV (omit to generate the car dataset)")
    p.add_argument("--universe", help="universe JSON for non-car CSVs")
    p.add_argument("--base-rows", type=int, help="rows to generate when --data is absent")
    p.add_argument("--base-seed", type=int, help="generator seed when --data is absent")
    p.add_argument("--generator", help="GeneratorConfig JSON")
    p.add_argument("--features", nargs="+", help="project onto these features (reduced universe)")


def _source(args) -> DatasetSource:
    data = {"csv": args.data, "universe": args.universe, "rows": args.base_rows,
            "seed": args.base_seed, "generator": args.generator, "features": args.features}
    return DatasetSource.model_validate({k: v for k, v in data.items() if v is not None})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collusion", description="Collective action success bounds")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate the synthetic car dataset")
    gen.add_argument("--rows", type=int, default=settings.BASE_ROWS)
    gen.add_argument("--seed", type=int, default=settings.SEED)
    gen.add_argument("--config", help="GeneratorConfig JSON")
    gen.add_argument("--threads", type=int)
    gen.add_argument("--out", required=True)

    desc = sub.add_parser("describe", help="cardinalities and signal-set label tallies")
    _add_source_args(desc)

    sweep = sub.add_parser("sweep", help="run a bound-vs-success sweep")
    sweep.add_argument("--config", help="ExperimentConfig JSON; overrides flags")
    sweep.add_argument("--objective", choices=STRATEGIES)
    sweep.add_argument("--target")
    sweep.add_argument("--naive-target")
    sweep.add_argument("--sharp", action="store_const", const=True)
    sweep.add_argument("--escape", choices=["flip", "constant"])
    sweep.add_argument("--N", type=int, nargs="+")
    sweep.add_argument("--Ntest", type=int)
    sweep.add_argument("--n-grid", type=int, nargs="+")
    sweep.add_argument("--ne", type=int, nargs="+")
    sweep.add_argument("--ne-fraction", type=float)
    sweep.add_argument("--ne-floor", type=int)
    sweep.add_argument("--delta", type=float)
    sweep.add_argument("--epsilon", type=float)
    sweep.add_argument("--eta", type=float)
    sweep.add_argument("--seeds", type=int, nargs="+")
    sweep.add_argument("--out")
    sweep.add_argument("--format", choices=["csv", "json"])
    sweep.add_argument("--threads", type=int)
    sweep.add_argument("--store", action="store_true", help="also persist rows to DATABASE_URL")
    _add_source_args(sweep)

    bounds = sub.add_parser("bounds", help="one bound report from a collective dataset CSV")
    bounds.add_argument("--data", required=True, help="the collective's pooled data D(n)")
    bounds.add_argument("--universe")
    bounds.add_argument("--objective", choices=STRATEGIES, default=Strategy.PLANT_FL.value)
    bounds.add_argument("--target", default="Excellent")
    bounds.add_argument("--g", help="transformation JSON {\"fix\": {feature: category}}")
    bounds.add_argument("--escape", choices=["flip", "constant"], default="flip")
    bounds.add_argument("--N", type=int, default=settings.N)
    bounds.add_argument("--Ntest", type=int, default=settings.N_TEST)
    bounds.add_argument("--ne", type=int, default=settings.NE)
    bounds.add_argument("--split-seed", type=int, default=settings.SEED)
    bounds.add_argument("--delta", type=float, default=settings.DELTA)
    bounds.add_argument("--epsilon", type=float, default=settings.EPSILON)
    bounds.add_argument("--eta", type=float)
    bounds.add_argument("--sharp", action="store_true")
    bounds.add_argument("--out", default="-")

    idr = sub.add_parser("compare-idr", help="infinite-data bounds vs the prior bound over an alpha grid")
    _add_source_args(idr)
    idr.add_argument("--target", default="Excellent")
    idr.add_argument("--alphas", type=float, nargs="+")
    idr.add_argument("--out", default="-")
    return parser


def cmd_generate(args) -> int:
    gen = GeneratorConfig.from_json(args.config) if args.config else GeneratorConfig()
    base = generate_base_dataset(args.rows, args.seed, gen.rubric, gen.sampler, threads=args.threads)
    base.write_csv(args.out)
    return 0


def cmd_describe(args) -> int:
    base = load_base(_source(args))
    g = resolve_transformation(base.universe)
    print(json.dumps(describe(base, g), indent=2))
    return 0


def cmd_sweep(args) -> int:
    flags = {
        "objective": args.objective, "target": args.target, "naive_target": args.naive_target,
        "sharp": args.sharp, "escape": args.escape,
        "N": (args.N[0] if len(args.N) == 1 else args.N) if args.N else None,
        "N_test": args.Ntest, "n_grid": args.n_grid,
        "n_e": (args.ne[0] if len(args.ne) == 1 else args.ne) if args.ne else None,
        "ne_fraction": args.ne_fraction, "ne_floor": args.ne_floor,
        "delta": args.delta, "epsilon": args.epsilon, "eta": args.eta, "seeds": args.seeds,
        "out": args.out, "format": args.format, "threads": args.threads,
    }
    data = {k: v for k, v in flags.items() if v is not None}
    data["dataset"] = _source(args).model_dump()
    if args.config:
        data.update(json.loads(Path(args.config).read_text()))
    config = ExperimentConfig.model_validate(data)

    result = run_sweep(config)
    emit_results(result, config.out or "-", config.format)
    if args.store:
        from app.db.init_db import init_db
        from app.db.session import SessionLocal

        init_db()
        with SessionLocal() as session:
            run_id = store_results(result, session)
        logger.info(f"✅ Stored as run {run_id}")
    return 0


def cmd_bounds(args) -> int:
    source = DatasetSource(csv=args.data, universe=args.universe)
    collective = load_base(source).with_role(DatasetRole.COLLECTIVE)
    universe = collective.universe
    fix = json.loads(Path(args.g).read_text())["fix"] if args.g else None
    g = resolve_transformation(universe, fix)
    strategy = Strategy(args.objective)
    n = len(collective)
    n_e = args.ne if strategy == Strategy.UNPLANT_ADAPTIVE else None
    eta = args.eta
    if strategy == Strategy.ERASE and eta is None:
        eta = measure_eta(collective, g)
    params = BoundParams(N=args.N, N_test=args.Ntest, n=n, n_e=n_e, delta=args.delta,
                         epsilon=args.epsilon, eta=eta)

    if strategy == Strategy.PLANT_FL:
        report = planting_bound_fl(collective, g, args.target, params)
    elif strategy == Strategy.PLANT_FO:
        report = planting_bound_fo(collective, g, args.target, escape_selector(universe, args.escape), params)
    elif strategy == Strategy.UNPLANT_NAIVE:
        planted, report = naive_unplanting_bound(collective, g, args.target, params)
        logger.info(f"Best naive label: {universe.labels[planted]}")
    elif strategy == Strategy.UNPLANT_ADAPTIVE:
        d_est, d_rest = split_dataset(collective, n_e, args.split_seed)
        report = unplanting_bound(d_est, d_rest, g, args.target, params, sharp=args.sharp)
    else:
        report = erasing_bound(collective, g, params)

    text = report.to_json(universe) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    logger.info(f"bound={report.bound:.6f} (clamped {report.bound_clamped:.6f}), {report.n_cracked} cracked")
    return 0


def cmd_compare_idr(args) -> int:
    base = load_base(_source(args))
    g = resolve_transformation(base.universe)
    dist = PopulationDistribution.from_counts(empirical_joint(base))
    alphas: List[float] = args.alphas or [round(a, 2) for a in np.arange(1, 100) / 100.0]
    fl = idr_curve(dist, g, args.target, alphas, Objective.PLANTING_FL)
    fo = idr_curve(dist, g, args.target, alphas, Objective.PLANTING_FO)
    prior = prior_curve(dist, g, args.target, alphas)
    frame = pd.DataFrame({
        "alpha": alphas,
        "idr_fl": [r.bound for r in fl],
        "idr_fo": [r.bound for r in fo],
        "prior": prior,
    })
    out = sys.stdout if args.out == "-" else args.out
    frame.to_csv(out, index=False, float_format="%.17g", lineterminator="\n")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "describe": cmd_describe,
    "sweep": cmd_sweep,
    "bounds": cmd_bounds,
    "compare-idr": cmd_compare_idr,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler(sys.stderr)],
    )
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CollusionError, ValidationError, OSError) as e:
        logger.error(f"❌ {args.command} failed: {e}", exc_info=settings.LOG_LEVEL == "DEBUG")
        return 2


if __name__ == "__main__":
    sys.exit(main())
