"""HTTP generation service: /v1 JSON API over a loaded model bundle.

All endpoints are stateless per request; the bundle is read-only after
startup. Motion frames travel as base64-embedded little-endian f32 arrays.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .errors import ConfigError, MtokError, SchemaError
from .pipeline import (ControlRequest, GenerationRequest, GenerationResult,
                       ModelBundle, control_decode, generate, reconstruct_motion,
                       tokenize_motion)
from .wire import decode_array, encode_array


class WireArray(BaseModel):
    shape: list[int]
    dtype: str
    data: str


class ControlBody(BaseModel):
    targets: WireArray
    mask: WireArray
    eta: float = 0.08
    inner_steps: int = Field(default=1, ge=1)


class GenerateBody(BaseModel):
    prompt: str = ""
    length: int = Field(ge=1)
    planner: str = "ddm"
    guidance_scale: float | None = None
    seed: int = 0
    control: ControlBody | None = None
    flags: dict[str, bool] = Field(default_factory=lambda: {
        "planner_local_cond": True, "decoder_guidance": True})
    temperature: float = 1.0


class TokenizeBody(BaseModel):
    frames: WireArray


class ReconstructBody(BaseModel):
    frames: WireArray
    seed: int = 0


class ControlDecodeBody(BaseModel):
    tokens: list[int]
    length: int = Field(ge=1)
    control: ControlBody | None = None
    seed: int = 0


def _control_request(body: ControlBody | None) -> ControlRequest | None:
    if body is None:
        return None
    targets = decode_array(body.targets.model_dump())
    mask = decode_array(body.mask.model_dump()).astype(bool)
    return ControlRequest(targets=targets.astype(np.float64), mask=mask,
                         eta=body.eta, inner_steps=body.inner_steps)


def _result_payload(result: GenerationResult) -> dict:
    motion = result.motion
    return {
        "frames": encode_array(motion.frames, "f32"),
        "joint_positions": encode_array(motion.joint_positions(), "f32"),
        "fps": motion.fps,
        "tokens": [int(t) for t in result.tokens],
        "keyframe_errors": result.keyframe_errors,
        "avg_err": result.avg_err,
        "timings": result.timings,
        "refine_calls": result.refine_calls,
        "planner_forward_passes": result.planner_forward_passes,
    }


def create_app(bundle: ModelBundle, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="motion generation service", version="1")

    @app.exception_handler(MtokError)
    async def _domain_error(request, exc: MtokError):
        status = 400 if isinstance(exc, SchemaError) else 422
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.get("/v1/health")
    def health():
        info = bundle.describe()
        return {"status": "ok", "model": {"planner": info["planner"],
                                          "downrate": info["downrate"],
                                          "K": info["K"]}}

    @app.get("/v1/model")
    def model():
        return bundle.describe()

    @app.post("/v1/generate")
    def generate_endpoint(body: GenerateBody):
        flags = body.flags
        request = GenerationRequest(
            prompt=body.prompt, length=body.length, planner=body.planner,
            guidance_scale=body.guidance_scale, seed=body.seed,
            control=_control_request(body.control),
            planner_local_cond=flags.get("planner_local_cond", True),
            decoder_guidance=flags.get("decoder_guidance", True),
            temperature=body.temperature)
        try:
            result = generate(bundle, request)
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _result_payload(result)

    @app.post("/v1/tokenize")
    def tokenize_endpoint(body: TokenizeBody):
        frames = decode_array(body.frames.model_dump())
        if frames.ndim != 2 or frames.shape[1] != bundle.tokenizer.cfg.feature_dim:
            raise HTTPException(status_code=400, detail="frames must be (T, D)")
        try:
            tokens = tokenize_motion(bundle, frames)
        except MtokError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"tokens": [int(t) for t in tokens],
                "compression_ratio": frames.shape[0] / max(1, len(tokens))}

    @app.post("/v1/reconstruct")
    def reconstruct_endpoint(body: ReconstructBody):
        frames = decode_array(body.frames.model_dump())
        if frames.ndim != 2 or frames.shape[1] != bundle.tokenizer.cfg.feature_dim:
            raise HTTPException(status_code=400, detail="frames must be (T, D)")
        try:
            motion, tokens = reconstruct_motion(bundle, frames, body.seed)
        except MtokError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"frames": encode_array(motion.frames, "f32"),
                "joint_positions": encode_array(motion.joint_positions(), "f32"),
                "fps": motion.fps,
                "tokens": [int(t) for t in tokens]}

    @app.post("/v1/control-decode")
    def control_decode_endpoint(body: ControlDecodeBody):
        try:
            result = control_decode(bundle, np.asarray(body.tokens, dtype=np.int64),
                                    body.length, _control_request(body.control),
                                    body.seed)
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _result_payload(result)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
