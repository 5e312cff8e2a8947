"""HTTP server for the shape-guided synthesis protocol.

POST /inpaint, POST /backview, GET /health. Payload validation is manual so
the protocol's status codes hold exactly: 400 for malformed requests, 422
for size mismatches (including the configured resolution cap), 503 while no
engine is loaded. Known pixels are composited back server-side, so responses
always satisfy the client's known-region invariant.
"""

from __future__ import annotations

import argparse
import logging
import threading
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .config import ServiceConfig
from .engines import (BackViewJob, EngineUnavailable, InpaintJob, build_engine)
from .imaging import decode_b64_png, encode_b64_png

log = logging.getLogger("diffusion_service")

_INPAINT_IMAGES = ("image", "known_mask", "normal", "silhouette")
_INPAINT_REQUIRED = _INPAINT_IMAGES + ("prompt", "seed")
_BACKVIEW_IMAGES = ("input_image", "normal", "depth", "silhouette")
_BACKVIEW_REQUIRED = _BACKVIEW_IMAGES + ("prompt", "seed")
_GUIDANCE_MODES = ("none", "normal", "silhouette", "both")


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _decode_images(body: dict, keys) -> dict | JSONResponse:
    out = {}
    for key in keys:
        value = body[key]
        if not isinstance(value, str):
            return _error(400, f"field {key} must be a base64 PNG string")
        try:
            out[key] = decode_b64_png(value)
        except Exception:
            return _error(400, f"field {key} is not a decodable base64 PNG")
    return out


def create_app(config: ServiceConfig) -> FastAPI:
    from contextlib import asynccontextmanager

    state = {"engine": None, "error": ""}
    job_lock = threading.Lock()  # one inference at a time, FIFO via uvicorn pool

    def try_load() -> None:
        engine = build_engine(config)
        try:
            engine.load()
        except EngineUnavailable as exc:
            state["engine"] = None
            state["error"] = str(exc)
            log.warning("engine unavailable: %s", exc)
            return
        state["engine"] = engine
        log.info("engine ready: %s", engine.model_identity)

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        try_load()
        yield

    app = FastAPI(title="shape-guided synthesis service", lifespan=lifespan)
    app.state.try_load = try_load

    @app.get("/health")
    def health():
        engine = state["engine"]
        if engine is None:
            return _error(503, state["error"] or "model not loaded")
        return {"status": "ok", "model": engine.model_identity}

    async def _json_body(request: Request) -> dict | JSONResponse:
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        if not isinstance(body, dict):
            return _error(400, "request body must be a JSON object")
        return body

    @app.post("/inpaint")
    async def inpaint(request: Request):
        engine = state["engine"]
        if engine is None:
            return _error(503, state["error"] or "model not loaded")
        body = await _json_body(request)
        if isinstance(body, JSONResponse):
            return body
        missing = [k for k in _INPAINT_REQUIRED if k not in body]
        if missing:
            return _error(400, f"missing fields: {', '.join(missing)}")
        images = _decode_images(body, _INPAINT_IMAGES)
        if isinstance(images, JSONResponse):
            return images
        shape = images["image"].shape[:2]
        for key in ("known_mask", "normal", "silhouette"):
            if images[key].shape[:2] != shape:
                return _error(422, f"{key} size {images[key].shape[1]}x"
                                   f"{images[key].shape[0]} does not match image")
        if max(shape) > config.max_resolution:
            return _error(422, f"request exceeds the configured max resolution "
                               f"({config.max_resolution})")
        guidance = str(body.get("guidance", "both"))
        if guidance not in _GUIDANCE_MODES:
            return _error(400, f"unknown guidance mode {guidance!r}")
        try:
            job = InpaintJob(
                image=images["image"],
                known_mask=images["known_mask"],
                normal=images["normal"],
                silhouette=images["silhouette"],
                prompt=str(body["prompt"]),
                negative_prompt=str(body.get("negative_prompt", "")),
                seed=int(body["seed"]),
                guidance_scale=float(body.get("guidance_scale", config.guidance_scale)),
                steps=int(body.get("steps", config.steps)),
                azimuth=float(body.get("azimuth", 0.0)),
                guidance=guidance,
            )
        except (TypeError, ValueError):
            return _error(400, "numeric fields are malformed")
        t0 = time.perf_counter()
        with job_lock:
            try:
                out = engine.inpaint(job)
            except EngineUnavailable as exc:
                return _error(503, str(exc))
        keep = job.known_mask >= 128
        out = out.copy()
        out[keep] = job.image[keep]
        elapsed = int((time.perf_counter() - t0) * 1000)
        log.info("inpaint azimuth=%.1f seed=%d steps=%d guidance=%s %dms",
                 job.azimuth, job.seed, job.steps, job.guidance, elapsed)
        return {"image": encode_b64_png(out),
                "backend_id": engine.model_identity,
                "elapsed_ms": elapsed}

    @app.post("/backview")
    async def backview(request: Request):
        engine = state["engine"]
        if engine is None:
            return _error(503, state["error"] or "model not loaded")
        body = await _json_body(request)
        if isinstance(body, JSONResponse):
            return body
        missing = [k for k in _BACKVIEW_REQUIRED if k not in body]
        if missing:
            return _error(400, f"missing fields: {', '.join(missing)}")
        images = _decode_images(body, _BACKVIEW_IMAGES)
        if isinstance(images, JSONResponse):
            return images
        shape = images["input_image"].shape[:2]
        for key in ("normal", "depth", "silhouette"):
            if images[key].shape[:2] != shape:
                return _error(422, f"{key} size does not match input_image")
        if max(shape) > config.max_resolution:
            return _error(422, f"request exceeds the configured max resolution "
                               f"({config.max_resolution})")
        depth = images["depth"]
        if depth.dtype != np.uint16:
            depth = depth.astype(np.uint16) * 257
        try:
            job = BackViewJob(
                input_image=images["input_image"],
                normal=images["normal"],
                depth=depth,
                silhouette=images["silhouette"],
                prompt=str(body["prompt"]),
                seed=int(body["seed"]),
            )
        except (TypeError, ValueError):
            return _error(400, "numeric fields are malformed")
        t0 = time.perf_counter()
        with job_lock:
            try:
                out = engine.back_view(job)
            except EngineUnavailable as exc:
                return _error(503, str(exc))
        log.info("backview seed=%d %dms", job.seed,
                 int((time.perf_counter() - t0) * 1000))
        return {"image": encode_b64_png(out)}

    return app


def main(argv=None) -> int:
    import uvicorn

    parser = argparse.ArgumentParser(prog="diffusion-service")
    parser.add_argument("--config", help="YAML or TOML config file")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8690)
    parser.add_argument("--log-level", default="info")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    config = ServiceConfig.load(args.config)
    uvicorn.run(create_app(config), host=args.host, port=args.port,
                log_level=args.log_level)
    return 0


if __name__ == "__main__":
    main()
