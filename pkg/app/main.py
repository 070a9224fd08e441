from fastapi import Depends, FastAPI, HTTPException
from pydantic import BaseModel, Field
from typing import Dict, List, Optional
from app.core.config import settings
from app.core.errors import CollusionError
from app.db.models import SweepRowRecord, SweepRun
from app.db.init_db import init_db
from app.db.session import SessionLocal, get_db
from app.services.concentration import (
    ConfidenceBudget,
    Objective,
    erasure_sample_window,
    hoeffding_term,
    union_delta,
)
from app.services.experiment import ExperimentConfig, emit_results, run_sweep, store_results
import asyncio
import logging
import sys

# Configure logging to output to console
logging.basicConfig(
    level=settings.LOG_LEVEL,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)

logger = logging.getLogger(__name__)

app = FastAPI(title=settings.PROJECT_NAME)


class BudgetRequest(BaseModel):
    delta: float = settings.DELTA
    objective: Objective = Objective.PLANTING_FL
    card_signal: int
    card_labels: int
    card_features: int = 1
    ks: List[int] = Field(default_factory=list)


class WindowRequest(BaseModel):
    delta_tilde: float
    eta: float
    N: int = settings.N


class SweepState:
    def __init__(self):
        self.running = False
        self.rows = 0
        self.skipped: List[Dict] = []
        self.error: Optional[str] = None
        self.run_id: Optional[int] = None
        self.results: List[Dict] = []
        self.task: Optional[asyncio.Task] = None

    def reset(self):
        self.rows = 0
        self.skipped = []
        self.error = None
        self.run_id = None
        self.results = []


sweep_state = SweepState()


@app.get("/")
def read_root():
    return {"message": "Collusion bounds service operational", "status": "running"}


@app.get("/health")
def health_check():
    return {"status": "ok"}


@app.get("/config")
def get_config():
    return settings.model_dump(exclude={"DATABASE_URL"})


@app.post("/budget")
def budget(req: BudgetRequest):
    try:
        b = ConfidenceBudget(req.delta, req.objective, req.card_signal, req.card_labels, req.card_features)
        delta_tilde = union_delta(b)
        r_terms = {str(k): hoeffding_term(delta_tilde, k) for k in req.ks}
    except CollusionError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {"objective": b.objective.value, "event_count": b.event_count,
            "delta_tilde": delta_tilde, "r_terms": r_terms}


@app.post("/erasure-window")
def erasure_window(req: WindowRequest):
    try:
        w = erasure_sample_window(req.delta_tilde, req.eta, req.N)
    except CollusionError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {"n_min": w.n_min, "n_max": w.n_max, "empty": w.is_empty}


def _store(result) -> int:
    init_db()
    with SessionLocal() as session:
        return store_results(result, session)


@app.post("/sweep")
async def start_sweep(config: ExperimentConfig, store: bool = False):
    if sweep_state.running:
        raise HTTPException(status_code=409, detail="a sweep is already running")
    sweep_state.reset()
    sweep_state.running = True

    async def run_with_error_handling():
        try:
            logger.info(f"🚀 Starting sweep ({config.objective.value})...")
            result = await asyncio.to_thread(run_sweep, config)
            sweep_state.rows = len(result.rows)
            sweep_state.results = [r.to_record() for r in result.rows]
            sweep_state.skipped = [{"seed": s.seed, "N": s.N, "n": s.n, "n_e": s.n_e, "reason": s.reason}
                                   for s in result.skipped]
            if config.out:
                await asyncio.to_thread(emit_results, result, config.out, config.format)
            if store:
                sweep_state.run_id = await asyncio.to_thread(_store, result)
            logger.info(f"✅ Sweep finished: {sweep_state.rows} rows")
        except Exception as e:
            logger.error(f"❌ Fatal error in sweep: {e}", exc_info=True)
            sweep_state.error = str(e)
        finally:
            sweep_state.running = False

    sweep_state.task = asyncio.create_task(run_with_error_handling())
    return {"status": "started"}


@app.get("/sweep/status")
def sweep_status():
    return {
        "running": sweep_state.running,
        "rows": sweep_state.rows,
        "skipped": sweep_state.skipped,
        "error": sweep_state.error,
        "run_id": sweep_state.run_id,
    }


@app.get("/sweep/results")
def sweep_results():
    if sweep_state.running:
        raise HTTPException(status_code=409, detail="sweep still running")
    return sweep_state.results


@app.get("/runs")
def list_runs(db=Depends(get_db)):
    runs = db.query(SweepRun).order_by(SweepRun.id.desc()).limit(50).all()
    return [{"id": r.id, "created_at": r.created_at, "objective": r.objective, "target": r.target,
             "n_rows": r.n_rows, "n_skipped": r.n_skipped} for r in runs]


@app.get("/runs/{run_id}")
def get_run(run_id: int, db=Depends(get_db)):
    run = db.get(SweepRun, run_id)
    if run is None:
        raise HTTPException(status_code=404, detail=f"no sweep run {run_id}")
    rows = db.query(SweepRowRecord).filter_by(run_id=run_id).order_by(
        SweepRowRecord.seed, SweepRowRecord.N, SweepRowRecord.n, SweepRowRecord.n_e).all()
    return {
        "id": run.id,
        "objective": run.objective,
        "config": ExperimentConfig.model_validate_json(run.config_json),
        "rows": [{"seed": r.seed, "N": r.N, "n": r.n, "n_e": r.n_e, "target": r.target,
                  "bound": r.bound, "bound_clamped": r.bound_clamped, "success": r.success,
                  "n_cracked": r.n_cracked} for r in rows],
    }
