"""FastAPI service wrapping the trained generator and teacher one-shots.

The service owns a loaded checkpoint and answers generation queries; batch
work (dataset generation, training) stays in the CLI.
"""

from __future__ import annotations

import torch
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..conditions import PhysioConditions
from ..errors import (
    CheckpointMismatchError,
    ConfigError,
    CorruptFileError,
    DegenerateInputError,
    MimeforgeError,
    MissingInputError,
    ShapeMismatchError,
)
from ..generate import ConditionPath, morph, sample, sweep
from ..metrics import nrmse
from ..runconfig import RunConfig
from . import schemas as s

_HTTP_STATUS = {
    ConfigError: 400,
    ShapeMismatchError: 400,
    DegenerateInputError: 422,
    MissingInputError: 404,
    CorruptFileError: 422,
    CheckpointMismatchError: 409,
}


class ServiceState:
    def __init__(self, run_config: RunConfig | None = None):
        self.run_config = run_config or RunConfig()
        self.model = None
        self.iteration: int | None = None

    def load_checkpoint(self, path: str) -> None:
        from ..checkpoint import load_checkpoint

        model, iteration = load_checkpoint(path, self.run_config.model_config_resolved())
        model.eval()
        self.model = model
        self.iteration = iteration

    def require_model(self):
        if self.model is None:
            raise HTTPException(status_code=503, detail="no checkpoint loaded")
        return self.model


def create_app(state: ServiceState | None = None) -> FastAPI:
    state = state or ServiceState()
    app = FastAPI(title="mimeforge", version=__version__)

    @app.exception_handler(MimeforgeError)
    async def _domain_error(_, exc: MimeforgeError):
        from fastapi.responses import JSONResponse

        return JSONResponse(
            status_code=_HTTP_STATUS.get(type(exc), 500),
            content={"category": exc.category, "detail": str(exc)},
        )

    @app.get("/health", response_model=s.HealthResponse)
    def health():
        return s.HealthResponse(
            status="ok",
            version=__version__,
            checkpoint_loaded=state.model is not None,
            iteration=state.iteration,
        )

    @app.post("/checkpoint/load", response_model=s.CheckpointInfo)
    def load_checkpoint(req: s.LoadCheckpointRequest):
        state.load_checkpoint(req.checkpoint_path)
        cfg = state.model.cfg
        return s.CheckpointInfo(
            iteration=state.iteration,
            rows=cfg.rows,
            cols=cfg.cols,
            time_samples=cfg.time_samples,
            latent_dim=cfg.latent_dim,
        )

    @app.post("/generate/morph", response_model=s.MuapResponse)
    def generate_morph(req: s.MorphRequest):
        model = state.require_model()
        out = morph(req.muap.to_array(), req.conditions, model)
        return s.MuapResponse(muap=s.MuapPayload.from_array(out))

    @app.post("/generate/sample", response_model=s.MuapResponse)
    def generate_sample(req: s.SampleRequest):
        model = state.require_model()
        out = sample(req.conditions, req.seed, model)
        return s.MuapResponse(muap=s.MuapPayload.from_array(out))

    @app.post("/generate/sweep", response_model=s.SweepResponse)
    def generate_sweep(req: s.SweepRequest):
        model = state.require_model()
        path = ConditionPath.from_knots([(k.t, k.conditions) for k in req.knots])
        kwargs = {}
        if req.muap is not None:
            kwargs["muap"] = req.muap.to_array()
        if req.latent is not None:
            kwargs["latent"] = torch.tensor(req.latent, dtype=model.cfg.torch_dtype)
        res = sweep(model, path, req.steps, **kwargs)
        return s.SweepResponse(
            fractions=[float(v) for v in res.fractions],
            conditions=[[float(v) for v in row] for row in res.conditions],
            distances=[float(v) for v in res.distances],
            muaps=[s.MuapPayload.from_array(m) for m in res.muaps],
        )

    @app.post("/teacher/simulate", response_model=s.MuapResponse)
    def teacher_simulate(req: s.SimulateRequest):
        from ..preprocess import preprocess
        from ..teacher import build_motor_unit, simulate_muap

        cfg = state.run_config.cylinder_config()
        ranges = state.run_config.condition_ranges()
        cond = PhysioConditions(
            fibre_count=req.fibre_count,
            depth_mm=req.depth_mm,
            medial_lateral=req.medial_lateral,
            nmj_fraction=req.nmj_fraction,
            velocity_mps=req.velocity_mps,
            length_ratio=req.length_ratio,
        )
        raw = simulate_muap(build_motor_unit(cfg, cond, req.seed, ranges), cond, cfg)
        if req.preprocessed:
            out = preprocess(raw, state.run_config.dataset.window)
        else:
            out = raw.potentials
        return s.MuapResponse(muap=s.MuapPayload.from_array(out))

    @app.post("/spikes/generate", response_model=s.SpikeTrainResponse)
    def spikes_generate(req: s.SpikeTrainRequest):
        from ..emg import ExcitationProfile, PoolConfig, generate_spike_trains

        pool = PoolConfig(**req.pool.model_dump())
        exc = ExcitationProfile.from_json_obj(req.excitation.model_dump())
        trains = generate_spike_trains(pool, exc)
        return s.SpikeTrainResponse(
            duration_s=trains.duration_s,
            trains=[[float(t) for t in tr] for tr in trains.trains],
        )

    @app.post("/metrics/nrmse", response_model=s.NrmseResponse)
    def metrics_nrmse(req: s.NrmseRequest):
        return s.NrmseResponse(
            nrmse_percent=nrmse(req.reference.to_array(), req.candidate.to_array())
        )

    return app
