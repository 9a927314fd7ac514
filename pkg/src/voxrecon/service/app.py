"""FastAPI service exposing the reconstruction pipeline.

Endpoints take filesystem paths plus parameters and run one pipeline stage
synchronously. Error payloads carry a `kind` field (config / numeric / io)
that the CLI maps onto its exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import pipeline
from ..config import default_config
from ..errors import ConfigError, NumericError
from . import models


def _error(kind: str, message: str, status: int) -> JSONResponse:
    return JSONResponse(status_code=status, content={"detail": {"kind": kind, "message": message}})


def create_app() -> FastAPI:
    app = FastAPI(title="voxrecon", version="0.1.0")

    @app.exception_handler(ConfigError)
    async def _config_error(request, exc):
        return _error("config", str(exc), 422)

    @app.exception_handler(NumericError)
    async def _numeric_error(request, exc):
        return _error("numeric", str(exc), 500)

    @app.exception_handler(OSError)
    async def _io_error(request, exc):
        return _error("io", str(exc), 500)

    @app.get("/health", response_model=models.HealthResponse)
    def health():
        return models.HealthResponse()

    @app.get("/config/defaults", response_model=models.ConfigResponse)
    def config_defaults():
        return models.ConfigResponse(**default_config().as_dict())

    @app.post("/synth", response_model=models.SynthResponse)
    def synth(req: models.SynthRequest):
        return models.SynthResponse(
            **pipeline.run_synth(
                req.scene_file,
                req.out_dir,
                n_frames=req.n_frames,
                radius=req.radius,
                center=req.center,
                height=req.height,
                width=req.width,
                image_height=req.image_height,
                fov_deg=req.fov_deg,
            )
        )

    @app.post("/fuse", response_model=models.FuseResponse)
    def fuse(req: models.FuseRequest):
        return models.FuseResponse(
            **pipeline.run_fuse(req.views_dir, req.out_checkpoint, req.grid.to_config())
        )

    @app.post("/optimize", response_model=models.OptimizeResponse)
    def optimize(req: models.OptimizeRequest):
        return models.OptimizeResponse(
            **pipeline.run_optimize(
                req.views_dir,
                req.out_checkpoint,
                req.out_csv,
                init=req.init,
                init_checkpoint=req.init_checkpoint,
                init_value=req.init_value,
                grid=req.grid.to_config(),
                optim=req.optim.to_config(),
                rotation_deg=req.rotation_deg,
                translation_m=req.translation_m,
                views_per_fragment=req.views_per_fragment,
            )
        )

    @app.post("/mesh", response_model=models.MeshResponse)
    def mesh(req: models.MeshRequest):
        return models.MeshResponse(**pipeline.run_mesh(req.checkpoint, req.out_ply, req.iso))

    @app.post("/render-depth", response_model=models.RenderDepthResponse)
    def render_depth(req: models.RenderDepthRequest):
        return models.RenderDepthResponse(
            **pipeline.run_render_depth(req.source, req.trajectory, req.out_dir)
        )

    @app.post("/eval", response_model=models.EvalResponse)
    def evaluate(req: models.EvalRequest):
        metrics = pipeline.run_eval(
            req.pred,
            req.gt,
            req.kind,
            threshold=req.threshold,
            n_samples=req.n_samples,
            seed=req.seed,
        )
        return models.EvalResponse(kind=req.kind, metrics=metrics)

    return app


app = create_app()
