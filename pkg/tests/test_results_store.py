from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from app.db.init_db import init_db
from app.db.models import SweepRowRecord, SweepRun
from app.services.experiment import ExperimentConfig, SkippedCell, SweepResult, SweepRow, store_results


def _result():
    config = ExperimentConfig(n_grid=[10, 20], N=100, N_test=10)
    rows = [
        SweepRow(seed=0, N=100, n=n, n_e=None, target="Excellent", bound=-0.4, bound_clamped=0.0,
                 delta_tilde=0.05 / 52, success=0.5, n_cracked=0, wall_time=0.01)
        for n in (10, 20)
    ]
    return SweepResult(config=config, rows=rows, skipped=[SkippedCell(0, 100, 200, None, "n >= N")])


def test_store_results_in_memory():
    engine = create_engine("sqlite://")
    init_db(engine)
    Session = sessionmaker(bind=engine)
    with Session() as session:
        run_id = store_results(_result(), session)
    with Session() as session:
        run = session.get(SweepRun, run_id)
        assert run.objective == "plant-fl"
        assert run.n_rows == 2 and run.n_skipped == 1
        assert ExperimentConfig.model_validate_json(run.config_json).n_grid == [10, 20]
        rows = session.query(SweepRowRecord).filter_by(run_id=run_id).order_by(SweepRowRecord.n).all()
        assert [r.n for r in rows] == [10, 20]
        assert rows[0].n_e is None
        assert rows[0].wall_time == 0.01
