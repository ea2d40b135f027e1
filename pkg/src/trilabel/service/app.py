"""FastAPI application exposing the engine.

Fast operations (dataset synthesis, checkpoint evaluation) answer inline;
training, ablations and sweeps are submitted as jobs and polled via
``GET /jobs/{id}``. Engine errors map to HTTP errors carrying the same
machine-readable category the CLI reports.
"""

import dataclasses
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..data import SyntheticConfig, generate_synthetic, write_dataset
from ..errors import EngineError, SampleLookupError
from ..harness import ablate, evaluate_checkpoint, sweep, train
from .jobs import JobManager
from .schemas import (AblateRequest, EvalRequest, EvalResponse, HealthResponse,
                      JobList, JobStatus, JobSubmitted, SweepRequest,
                      SynthRequest, SynthResponse, TrainRequest)

_STATUS_BY_CATEGORY = {
    "config": 400,
    "domain": 400,
    "format": 400,
    "state": 409,
    "lookup": 404,
    "internal": 500,
}


def _job_status(record):
    return JobStatus(job_id=record.job_id, kind=record.kind, state=record.state,
                     progress=record.progress, result=record.result,
                     error=record.error)


def create_app(jobs: JobManager = None) -> FastAPI:
    app = FastAPI(title="trilabel", version=__version__,
                  description="Multi-level pseudo-label training service")
    manager = jobs or JobManager()

    @app.exception_handler(EngineError)
    def engine_error_handler(request: Request, exc: EngineError):
        return JSONResponse(
            status_code=_STATUS_BY_CATEGORY.get(exc.category, 500),
            content={"error": {"category": exc.category, "message": str(exc)}})

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest):
        merged = dataclasses.replace(
            SyntheticConfig(), **req.config.model_dump(exclude_none=True))
        merged.confusable_pairs = [tuple(p) for p in merged.confusable_pairs]
        dataset = generate_synthetic(merged)
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: str(out / f"{name}.sitf")
                 for name in ("labeled", "unlabeled", "test", "anchors")}
        write_dataset(dataset, paths["labeled"], paths["unlabeled"],
                      paths["test"], paths["anchors"],
                      include_hidden_labels=req.include_hidden_labels)
        return SynthResponse(num_labeled=len(dataset.labeled),
                             num_unlabeled=len(dataset.unlabeled),
                             num_test=len(dataset.test),
                             num_classes=dataset.num_classes,
                             dim=dataset.dim, **paths)

    @app.post("/eval", response_model=EvalResponse)
    def eval_checkpoint(req: EvalRequest):
        for path in (req.checkpoint, req.test_file):
            if not Path(path).exists():
                raise SampleLookupError(f"no such file: {path}")
        return EvalResponse(accuracy=evaluate_checkpoint(req.checkpoint, req.test_file))

    @app.post("/train", response_model=JobSubmitted)
    def submit_train(req: TrainRequest):
        config = req.config.to_config()
        config.validate()

        def job(set_progress):
            result = train(config, out_dir=req.out_dir, progress=set_progress)
            return {
                "final_test_accuracy": result.final_test_accuracy,
                "epochs": len(result.metrics),
                "out_dir": result.out_dir,
                "checkpoint": result.checkpoint_path,
                "final_metrics": dataclasses.asdict(result.metrics[-1]),
            }

        return JobSubmitted(job_id=manager.submit("train", job), kind="train")

    @app.post("/ablate", response_model=JobSubmitted)
    def submit_ablate(req: AblateRequest):
        config = req.config.to_config()
        config.validate()

        def job(set_progress):
            rows = ablate(config, out_dir=req.out_dir, progress=set_progress)
            return {"rows": [dataclasses.asdict(r) for r in rows],
                    "out_dir": req.out_dir}

        return JobSubmitted(job_id=manager.submit("ablate", job), kind="ablate")

    @app.post("/sweep", response_model=JobSubmitted)
    def submit_sweep(req: SweepRequest):
        config = req.config.to_config()
        config.validate()

        def job(set_progress):
            points = sweep(config, req.parameter, req.grid, out_dir=req.out_dir,
                           progress=set_progress)
            return {"parameter": req.parameter,
                    "points": [dataclasses.asdict(p) for p in points],
                    "out_dir": req.out_dir}

        return JobSubmitted(job_id=manager.submit("sweep", job), kind="sweep")

    @app.get("/jobs", response_model=JobList)
    def list_jobs():
        return JobList(jobs=[_job_status(r) for r in manager.all()])

    @app.get("/jobs/{job_id}", response_model=JobStatus)
    def job_status(job_id: str):
        record = manager.get(job_id)
        if record is None:
            raise SampleLookupError(f"unknown job id {job_id!r}")
        return _job_status(record)

    return app
