"""FastAPI service wrapping the reconstruction pipeline.

Every pipeline stage is one POST endpoint operating on the server's
filesystem. Core errors surface as structured bodies with a ``kind`` field
("invalid-input" | "numerical-failure" | "io") that thin clients map to
exit codes.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import load_config
from ..errors import InvalidInputError, NumericalFailureError
from ..pipeline import (
    bench_memory,
    compute_depth_maps,
    evaluate_clouds,
    fuse_depth_dirs,
    stitch_scene,
    synth_scene,
)
from .models import (
    BenchRequest,
    BenchResponse,
    DepthRequest,
    DepthResponse,
    EvalRequest,
    EvalResponse,
    FuseRequest,
    FuseResponse,
    StitchRequest,
    StitchResponse,
    SynthRequest,
    SynthResponse,
)


def _error(status: int, kind: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"kind": kind, "message": message})


def create_app() -> FastAPI:
    app = FastAPI(title="cermvs", version=__version__)

    @app.exception_handler(InvalidInputError)
    async def _invalid(request, exc):
        return _error(400, "invalid-input", str(exc))

    @app.exception_handler(NumericalFailureError)
    async def _numerical(request, exc):
        return _error(500, "numerical-failure", str(exc))

    @app.exception_handler(FileNotFoundError)
    async def _missing(request, exc):
        return _error(404, "io", str(exc))

    @app.exception_handler(OSError)
    async def _oserror(request, exc):
        return _error(400, "io", str(exc))

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/v1/depth", response_model=DepthResponse)
    def depth(req: DepthRequest):
        cfg = load_config(
            req.config,
            overrides={
                "threads": req.threads,
                "scale_mode": req.scale_mode,
                "seed": req.seed,
            },
        )
        outputs = compute_depth_maps(
            req.scene_dir,
            req.weights,
            req.out_dir,
            cfg,
            resolution=req.resolution,
            views=req.views,
        )
        factors_path = Path(req.out_dir) / "scale_factors.txt"
        from ..pipeline import read_scale_factors

        return DepthResponse(
            outputs={vid: str(p) for vid, p in outputs.items()},
            scale_factors=read_scale_factors(factors_path),
        )

    @app.post("/v1/fuse", response_model=FuseResponse)
    def fuse(req: FuseRequest):
        cfg = load_config(req.config, overrides={"fusion_threshold": req.threshold})
        outputs = fuse_depth_dirs(
            req.lr_dir, req.hr_dir, req.out_dir, threshold=cfg.fusion_threshold
        )
        return FuseResponse(outputs={vid: str(p) for vid, p in outputs.items()})

    @app.post("/v1/stitch", response_model=StitchResponse)
    def stitch(req: StitchRequest):
        cfg = load_config(
            req.config,
            overrides={
                "pass_percent": req.pass_percent,
                "pixel_threshold": req.pixel_threshold,
                "depth_threshold": req.depth_threshold,
                "min_consistent": req.min_consistent,
                "stitch_resolution": req.stitch_resolution,
            },
        )
        return StitchResponse(**stitch_scene(req.scene_dir, req.depth_dir, req.out_ply, cfg))

    @app.post("/v1/eval", response_model=EvalResponse)
    def eval_clouds(req: EvalRequest):
        metrics = evaluate_clouds(req.recon_ply, req.gt_ply, req.tau, req.max_dist)
        return EvalResponse(**metrics.as_dict())

    @app.post("/v1/synth", response_model=SynthResponse)
    def synth(req: SynthRequest):
        if req.spec_text is not None:
            text = req.spec_text
        elif req.spec_path is not None:
            path = Path(req.spec_path)
            if not path.is_file():
                raise FileNotFoundError(f"no scene spec at {path}")
            text = path.read_text()
        else:
            raise InvalidInputError("provide spec_path or spec_text")
        return SynthResponse(**synth_scene(text, req.out_dir))

    @app.post("/v1/bench", response_model=BenchResponse)
    def bench(req: BenchRequest):
        cfg = load_config(req.config)
        est = bench_memory(cfg, width=req.width, height=req.height, views=req.views)
        return BenchResponse(
            cascaded_elems=est.cascaded_elems,
            non_cascaded_elems=est.non_cascaded_elems,
            ratio=est.ratio,
            cascaded_bytes=est.cascaded_bytes,
            non_cascaded_bytes=est.non_cascaded_bytes,
        )

    return app
