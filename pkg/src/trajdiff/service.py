"""Stateless HTTP facade over sampling, guidance, clustering, and log
probability.

The checkpoint and optional corpus are loaded once at startup and shared
read-only; every request derives its randomness from the request seed
alone, so identical requests return identical bodies (timings_ms aside).
Errors: 400 for schema/limit violations with a field path, 422 for numeric
failures during sampling, 404 for unknown scenes.
"""

from __future__ import annotations

import hashlib
import time
from typing import Any

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .engine import TrajectoryModel
from .errors import DataError, NumericError
from .guidance import guidance_from_json
from .metrics import cluster_joint, overlap_rate
from .scenes import Scenario, read_corpus, regenerate_from_id, scenario_from_dict, scenario_to_dict

MAX_SAMPLES = 512
MAX_AGENTS = 8
SERVICE_FORMAT_VERSION = 1


class SampleRequest(BaseModel):
    scene: dict | None = None
    scene_id: str | None = None
    num_samples: int = Field(default=64, ge=1)
    steps: int | None = Field(default=None, ge=2)
    seed: int = 0
    constraints: dict | None = None
    cluster_k: int | None = Field(default=None, ge=1)
    include_logp: bool = False
    logp_probes: int | None = Field(default=None, ge=1)


class LogProbRequest(BaseModel):
    scene: dict | None = None
    scene_id: str | None = None
    latents: list | None = None
    samples: list | None = None  # scene-frame trajectories, alternative to latents
    probes: int | None = Field(default=None, ge=1)
    seed: int = 0


def _error_body(code: str, message: str, field_path: str | None = None) -> dict:
    err: dict[str, Any] = {"code": code, "message": message}
    if field_path:
        err["field_path"] = field_path
    return {"error": err}


class ServiceState:
    def __init__(self, model: TrajectoryModel, corpus: list[Scenario], model_id: str):
        self.model = model
        self.by_id = {sc.scenario_id: sc for sc in corpus}
        self.model_id = model_id

    def resolve_scene(self, req) -> Scenario:
        if (req.scene is None) == (req.scene_id is None):
            raise DataError("exactly one of 'scene' or 'scene_id' is required")
        if req.scene is not None:
            return scenario_from_dict(req.scene)
        if req.scene_id in self.by_id:
            return self.by_id[req.scene_id]
        return regenerate_from_id(req.scene_id)


def create_app(
    model: TrajectoryModel,
    corpus: list[Scenario] | None = None,
    cors_origin: str | None = None,
    model_id: str | None = None,
) -> FastAPI:
    state = ServiceState(model, corpus or [], model_id or "unknown")
    app = FastAPI(title="trajdiff service", version=__version__)

    if cors_origin:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=[cors_origin],
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(_req: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        path = ".".join(str(p) for p in first.get("loc", ()) if p != "body")
        return JSONResponse(
            status_code=400, content=_error_body("schema", first.get("msg", "invalid request"), path)
        )

    @app.exception_handler(DataError)
    async def on_data_error(_req: Request, exc: DataError):
        return JSONResponse(status_code=400, content=_error_body("data", str(exc)))

    @app.exception_handler(NumericError)
    async def on_numeric_error(_req: Request, exc: NumericError):
        return JSONResponse(status_code=422, content=_error_body("numeric", str(exc)))

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "model_id": state.model_id}

    @app.get("/v1/scenes")
    def scenes():
        return {
            "scenes": [
                {"scenario_id": sc.scenario_id, "layout": sc.layout, "n_agents": sc.n_agents}
                for sc in state.by_id.values()
            ]
        }

    @app.get("/v1/scenes/{scene_id}")
    def scene_by_id(scene_id: str):
        if scene_id in state.by_id:
            return scenario_to_dict(state.by_id[scene_id])
        try:
            return scenario_to_dict(regenerate_from_id(scene_id))
        except DataError:
            return JSONResponse(
                status_code=404, content=_error_body("not_found", f"scene {scene_id!r} unknown")
            )

    @app.post("/v1/sample")
    def sample(req: SampleRequest):
        t_start = time.perf_counter()
        if req.num_samples > MAX_SAMPLES:
            return JSONResponse(
                status_code=400,
                content=_error_body(
                    "limit", f"num_samples {req.num_samples} exceeds {MAX_SAMPLES}", "num_samples"
                ),
            )
        scenario = state.resolve_scene(req)
        if scenario.n_agents > MAX_AGENTS:
            return JSONResponse(
                status_code=400,
                content=_error_body("limit", f"{scenario.n_agents} agents exceeds {MAX_AGENTS}", "scene"),
            )
        if req.cluster_k is not None and req.cluster_k > req.num_samples:
            return JSONResponse(
                status_code=400,
                content=_error_body("limit", "cluster_k cannot exceed num_samples", "cluster_k"),
            )
        gcfg = None
        if req.constraints is not None:
            n_t = scenario.agents[0].future.shape[0]
            gcfg = guidance_from_json(req.constraints, n_agents=scenario.n_agents, n_t=n_t)
        t0 = time.perf_counter()
        result = state.model.sample_scene(
            scenario, num_samples=req.num_samples, seed=req.seed, steps=req.steps, guidance_cfg=gcfg
        )
        sample_ms = (time.perf_counter() - t0) * 1000
        body: dict[str, Any] = {
            "format_version": SERVICE_FORMAT_VERSION,
            "scenario_id": scenario.scenario_id,
            "seed": req.seed,
            "config": {
                "num_samples": req.num_samples,
                "steps": req.steps or state.model.diffusion.num_steps,
                "constraints": req.constraints,
                "cluster_k": req.cluster_k,
            },
            "samples": result.trajectories.tolist(),
            "latents": result.latents.tolist(),
        }
        if req.include_logp:
            lps = state.model.logp_scene_samples(
                scenario,
                result.latents,
                estimator="hutchinson" if req.logp_probes else "exact",
                probes=req.logp_probes or 100,
                seed=req.seed,
            )
            if not all(np.isfinite(r.logp) for r in lps):
                raise NumericError("log probability integration produced non-finite values")
            body["logp"] = [r.logp for r in lps]
        if req.cluster_k:
            clustered = cluster_joint(result.trajectories, k=req.cluster_k)
            body["clusters"] = {
                "trajectories": clustered.trajectories.tolist(),
                "probabilities": clustered.probabilities.tolist(),
            }
        body["metrics"] = _response_metrics(result.trajectories, req.constraints)
        body["timings_ms"] = {
            "sample": sample_ms,
            "total": (time.perf_counter() - t_start) * 1000,
        }
        return body

    @app.post("/v1/logprob")
    def logprob(req: LogProbRequest):
        scenario = state.resolve_scene(req)
        if req.latents is not None:
            latents = np.asarray(req.latents, dtype=np.float64)
        elif req.samples is not None:
            trajs = np.asarray(req.samples, dtype=np.float64)
            if trajs.ndim != 4:
                raise DataError("'samples' must have shape (N, N_a, N_t, 2)")
            latents = np.stack(
                [state.model.codec.encode(t, scenario.poses()) for t in trajs]
            )
        else:
            raise DataError("one of 'latents' or 'samples' is required")
        if latents.ndim != 3 or latents.shape[1] != scenario.n_agents:
            raise DataError(f"latents shape {latents.shape} does not match the scene")
        results = state.model.logp_scene_samples(
            scenario,
            latents,
            estimator="hutchinson" if req.probes else "exact",
            probes=req.probes or 100,
            seed=req.seed,
        )
        if not all(np.isfinite(r.logp) for r in results):
            raise NumericError("log probability integration produced non-finite values")
        return {
            "format_version": SERVICE_FORMAT_VERSION,
            "scenario_id": scenario.scenario_id,
            "seed": req.seed,
            "estimator": results[0].estimator,
            "logp": [r.logp for r in results],
        }

    return app


def _response_metrics(trajectories: np.ndarray, constraints: dict | None) -> dict:
    """Aggregates the UI cross-checks client-side."""
    metrics: dict[str, Any] = {
        "mean_sample_overlap": float(np.mean([overlap_rate(t) for t in trajectories]))
    }
    attractors = (constraints or {}).get("attractors") or []
    if attractors:
        dists = []
        for item in attractors:
            agent, t_index = int(item["agent"]), int(item["t_index"])
            target = np.array([float(item["x"]), float(item["y"])])
            d = np.linalg.norm(trajectories[:, agent, t_index] - target, axis=-1)
            dists.append(d)
        stacked = np.stack(dists)  # (n_attractors, N)
        metrics["mean_target_distance"] = float(stacked.mean())
        metrics["min_target_distance"] = float(stacked.min())
    return metrics


def build_service(ckpt_path, pca_path=None, corpus_path=None, cors_origin=None) -> FastAPI:
    """Load artifacts and construct the app (used by the CLI)."""
    model = TrajectoryModel.load(ckpt_path)
    if pca_path is not None:
        from .pca import load_pca

        disk = load_pca(pca_path)
        if getattr(model.codec, "pca", None) is None:
            raise DataError("--pca given but the checkpoint uses the raw-trajectory codec")
        if not np.allclose(disk.components, model.codec.pca.components):
            raise DataError("--pca model differs from the codec embedded in the checkpoint")
    corpus = read_corpus(corpus_path) if corpus_path else []
    digest = hashlib.sha256(open(ckpt_path, "rb").read()).hexdigest()[:12]
    return create_app(model, corpus=corpus, cors_origin=cors_origin, model_id=digest)
