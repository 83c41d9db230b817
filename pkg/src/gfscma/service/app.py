"""FastAPI application. The handlers are plain functions so the CLI can call
them in-process without a server."""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..harness import (
    PointResult,
    SweepResult,
    _aggregate,
    run_trial,
    sweep,
    sweep_metadata,
)
from ..model import ConfigError
from .schemas import (
    ConfigModel,
    PointModel,
    SweepRequest,
    SweepResponse,
    TrialRequest,
    TrialResponse,
    TrialResultModel,
    ValidateResponse,
)


def handle_validate(cfg: ConfigModel) -> ValidateResponse:
    try:
        c = cfg.to_config()
    except (ConfigError, ValueError, TypeError) as e:
        return ValidateResponse(valid=False, error=str(e))
    return ValidateResponse(valid=True, config=c.to_dict())


def handle_trial(req: TrialRequest) -> TrialResponse:
    cfg = req.config.to_config()
    bo, do = req.bigamp.to_options(), req.detector.to_options()
    trace: Optional[list] = [] if req.trace else None
    result, art = run_trial(cfg, req.snr_db, req.seed, bo, do, trace=trace, keep=True)
    point = _aggregate(cfg, req.snr_db, [result])
    frames = None
    if req.frames:
        frames = [[float(v) for z in row for v in (z.real, z.imag)] for row in art.X]
    meta = sweep_metadata([cfg], [req.snr_db], 1, None, 1, bo, do)
    meta["trial_seed"] = req.seed
    return TrialResponse(
        result=TrialResultModel(**dataclasses.asdict(result)),
        point=PointModel.from_point(point),
        metadata=meta,
        trace=None if trace is None else [list(map(float, t)) for t in trace],
        frames=frames,
    )


def handle_sweep(req: SweepRequest) -> SweepResponse:
    if req.gammas is None:
        template = req.config.to_config()
    elif not req.gammas:
        raise ConfigError("empty gamma grid")
    else:
        template = req.config.to_config(req.gammas[0])
    res = sweep(
        template, req.gammas, req.snr_db, req.trials, req.parallelism, req.seed,
        req.bigamp.to_options(), req.detector.to_options(),
    )
    return SweepResponse(points=[PointModel.from_point(p) for p in res.points], metadata=res.metadata)


def to_sweep_result(resp: SweepResponse | TrialResponse) -> SweepResult:
    points = resp.points if isinstance(resp, SweepResponse) else [resp.point]
    return SweepResult([p.to_point() for p in points], resp.metadata)


def _call(fn, req):
    try:
        return fn(req)
    except (ConfigError, ValueError) as e:
        raise HTTPException(status_code=422, detail=str(e)) from None


def create_app() -> FastAPI:
    app = FastAPI(title="gfscma", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/config/validate", response_model=ValidateResponse)
    def validate(cfg: ConfigModel) -> ValidateResponse:
        return handle_validate(cfg)

    @app.post("/trial", response_model=TrialResponse)
    def trial(req: TrialRequest) -> TrialResponse:
        return _call(handle_trial, req)

    @app.post("/sweep", response_model=SweepResponse)
    def sweep_endpoint(req: SweepRequest) -> SweepResponse:
        return _call(handle_sweep, req)

    return app


app = create_app()
