"""Protocol-conformant mock of the synthesis service.

Serves /inpaint, /backview, and /health over HTTP backed by the oracle or
diffuse-fill backends, so remote-client code paths can be exercised without
the real model service. The conformance checks in this module run against
any base URL speaking the same protocol.
"""

from __future__ import annotations

import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import requests

from . import imaging
from .gateway import (BackViewRequest, DiffuseFillBackend, InpaintRequest,
                      OracleBackend)

_INPAINT_REQUIRED = ("image", "known_mask", "normal", "silhouette", "prompt", "seed")
_BACKVIEW_REQUIRED = ("input_image", "normal", "depth", "silhouette", "prompt", "seed")


def load_ground_truth_views(views_dir) -> dict:
    """Read view_<azimuth>.png files into an azimuth -> image map."""
    import os
    views = {}
    pattern = re.compile(r"view_([+-]?\d+)\.png$")
    for name in sorted(os.listdir(views_dir)):
        m = pattern.match(name)
        if m:
            views[float(int(m.group(1)))] = imaging.load_png(os.path.join(views_dir, name))
    if not views:
        raise FileNotFoundError(f"no view_<azimuth>.png files in {views_dir}")
    return views


class _Handler(BaseHTTPRequestHandler):
    backend = None
    model_name = "mock"

    def log_message(self, fmt, *args):  # silence per-request stderr noise
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_json(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        return json.loads(raw)

    def do_GET(self):
        if self.path == "/health":
            if self.backend is None:
                self._send_json(503, {"status": "unavailable", "model": ""})
            else:
                self._send_json(200, {"status": "ok", "model": self.model_name})
        else:
            self._send_json(404, {"error": f"unknown path {self.path}"})

    def do_POST(self):
        if self.backend is None:
            self._send_json(503, {"error": "model unavailable"})
            return
        try:
            body = self._read_json()
        except (ValueError, json.JSONDecodeError):
            self._send_json(400, {"error": "request body is not valid JSON"})
            return
        if self.path == "/inpaint":
            self._handle_inpaint(body)
        elif self.path == "/backview":
            self._handle_backview(body)
        else:
            self._send_json(404, {"error": f"unknown path {self.path}"})

    def _decode_images(self, body: dict, keys: tuple) -> dict | None:
        missing = [k for k in keys if k not in body]
        if missing:
            self._send_json(400, {"error": f"missing fields: {', '.join(missing)}"})
            return None
        out = {}
        for k in keys:
            val = body[k]
            if not isinstance(val, str):
                self._send_json(400, {"error": f"field {k} must be a base64 PNG string"})
                return None
            try:
                out[k] = imaging.from_b64_png(val)
            except Exception:
                self._send_json(400, {"error": f"field {k} is not a decodable PNG"})
                return None
        return out

    def _handle_inpaint(self, body: dict) -> None:
        imgs = self._decode_images(body, ("image", "known_mask", "normal", "silhouette"))
        if imgs is None:
            return
        missing = [k for k in _INPAINT_REQUIRED if k not in body]
        if missing:
            self._send_json(400, {"error": f"missing fields: {', '.join(missing)}"})
            return
        shape = imgs["image"].shape[:2]
        for key in ("known_mask", "normal", "silhouette"):
            if imgs[key].shape[:2] != shape:
                self._send_json(422, {"error": f"{key} size does not match image"})
                return
        t0 = time.perf_counter()
        request = InpaintRequest(
            blended=imaging.from_uint8(imgs["image"]),
            known_mask=imgs["known_mask"],
            normal_map=imgs["normal"],
            silhouette=imgs["silhouette"],
            prompt=str(body["prompt"]),
            negative_prompt=str(body.get("negative_prompt", "")),
            seed=int(body["seed"]),
            guidance_scale=float(body.get("guidance_scale", 15.0)),
            steps=int(body.get("steps", 25)),
            view_azimuth=float(body.get("azimuth", 0.0)),
            guidance=str(body.get("guidance", "both")),
        )
        try:
            response = self.backend.inpaint(request)
        except Exception as exc:
            self._send_json(503, {"error": f"backend failed: {exc}"})
            return
        self._send_json(200, {
            "image": imaging.b64_png(response.image),
            "backend_id": f"mock:{response.backend_id}",
            "elapsed_ms": int((time.perf_counter() - t0) * 1000),
        })

    def _handle_backview(self, body: dict) -> None:
        missing = [k for k in _BACKVIEW_REQUIRED if k not in body]
        if missing:
            self._send_json(400, {"error": f"missing fields: {', '.join(missing)}"})
            return
        imgs = self._decode_images(body, ("input_image", "normal", "depth", "silhouette"))
        if imgs is None:
            return
        shape = imgs["input_image"].shape[:2]
        for key in ("normal", "depth", "silhouette"):
            if imgs[key].shape[:2] != shape:
                self._send_json(422, {"error": f"{key} size does not match input_image"})
                return
        request = BackViewRequest(
            input_image=imaging.from_uint8(imgs["input_image"]),
            normal_map=imgs["normal"],
            depth=imgs["depth"],
            silhouette=imgs["silhouette"],
            prompt=str(body["prompt"]),
            seed=int(body["seed"]),
        )
        try:
            image = self.backend.back_view(request)
        except Exception as exc:
            self._send_json(503, {"error": f"backend failed: {exc}"})
            return
        self._send_json(200, {"image": imaging.b64_png(image)})


class MockServer:
    """Threaded protocol server; use as a context manager in tests."""

    def __init__(self, port: int = 0, gt_dir: str | None = None):
        if gt_dir:
            import os
            views_dir = os.path.join(gt_dir, "views")
            backend = OracleBackend(load_ground_truth_views(
                views_dir if os.path.isdir(views_dir) else gt_dir))
            model = "mock-oracle"
        else:
            backend = DiffuseFillBackend()
            model = "mock-diffuse-fill"
        handler = type("BoundHandler", (_Handler,),
                       {"backend": backend, "model_name": model})
        self._server = ThreadingHTTPServer(("127.0.0.1", port), handler)
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


# ---------------------------------------------------------------------------
# Protocol conformance checks (run against any base URL)
# ---------------------------------------------------------------------------

def _fixture_payload(size: int = 64, all_known: bool = False) -> dict:
    rng = np.random.default_rng(7)
    image = rng.random((size, size, 3))
    silhouette = np.zeros((size, size), dtype=np.uint8)
    silhouette[8:-8, 8:-8] = 255
    known = np.full((size, size), 255, dtype=np.uint8)
    if not all_known:
        known[16:-16, 16:-16] = 0
    normal = np.full((size, size, 3), 128, dtype=np.uint8)
    return {
        "image": imaging.b64_png(image),
        "known_mask": imaging.b64_png(known),
        "normal": imaging.b64_png(normal),
        "silhouette": imaging.b64_png(silhouette),
        "prompt": "conformance probe",
        "negative_prompt": "",
        "seed": 11,
        "guidance_scale": 15.0,
        "steps": 25,
        "azimuth": 45.0,
    }


def run_conformance_suite(base_url: str, timeout: float = 60.0) -> list[tuple[str, bool, str]]:
    """Check a live server against the inpainting protocol.

    Returns (check name, passed, detail) per check; all True means the
    server is protocol-conformant from the client's point of view.
    """
    base = base_url.rstrip("/")
    results: list[tuple[str, bool, str]] = []

    def check(name: str, fn):
        try:
            fn()
            results.append((name, True, ""))
        except AssertionError as exc:
            results.append((name, False, str(exc)))
        except Exception as exc:
            results.append((name, False, f"{type(exc).__name__}: {exc}"))

    def get(path):
        return requests.get(base + path, timeout=timeout)

    def post(path, payload):
        return requests.post(base + path, json=payload, timeout=timeout)

    def c_health():
        r = get("/health")
        assert r.status_code == 200, f"/health -> {r.status_code}"
        body = r.json()
        assert body.get("status") == "ok", f"health status {body}"
        assert "model" in body, "health payload missing 'model'"

    def c_inpaint_roundtrip():
        payload = _fixture_payload(all_known=True)
        r = post("/inpaint", payload)
        assert r.status_code == 200, f"/inpaint -> {r.status_code}: {r.text[:120]}"
        body = r.json()
        assert "backend_id" in body and "elapsed_ms" in body, "missing response fields"
        out = imaging.from_b64_png(body["image"])
        src = imaging.from_b64_png(payload["image"])
        assert out.shape == src.shape, f"size changed: {out.shape} vs {src.shape}"
        dev = np.abs(out.astype(int) - src.astype(int)).max()
        assert dev <= 2, f"fully-known request altered pixels by {dev}/255"

    def c_known_region():
        payload = _fixture_payload(all_known=False)
        r = post("/inpaint", payload)
        assert r.status_code == 200, f"/inpaint -> {r.status_code}: {r.text[:120]}"
        out = imaging.from_b64_png(r.json()["image"])
        src = imaging.from_b64_png(payload["image"])
        keep = imaging.from_b64_png(payload["known_mask"]) >= 128
        dev = np.abs(out[keep].astype(int) - src[keep].astype(int)).max()
        assert dev <= 2, f"known region altered by {dev}/255"

    def c_malformed_400():
        payload = _fixture_payload()
        payload.pop("image")
        r = post("/inpaint", payload)
        assert r.status_code == 400, f"missing field -> {r.status_code}, want 400"

    def c_mismatch_422():
        payload = _fixture_payload()
        payload["known_mask"] = imaging.b64_png(np.full((32, 32), 255, dtype=np.uint8))
        r = post("/inpaint", payload)
        assert r.status_code == 422, f"size mismatch -> {r.status_code}, want 422"

    def c_backview():
        size = 64
        rng = np.random.default_rng(3)
        sil = np.zeros((size, size), dtype=np.uint8)
        sil[8:-8, 20:-20] = 255
        payload = {
            "input_image": imaging.b64_png(rng.random((size, size, 3))),
            "normal": imaging.b64_png(np.full((size, size, 3), 128, dtype=np.uint8)),
            "depth": imaging.b64_png(
                (sil.astype(np.uint16) * 200), bit16=True),
            "silhouette": imaging.b64_png(sil),
            "prompt": "back view probe",
            "seed": 5,
        }
        r = post("/backview", payload)
        assert r.status_code == 200, f"/backview -> {r.status_code}: {r.text[:120]}"
        out = imaging.from_b64_png(r.json()["image"])
        assert out.shape[:2] == (size, size), f"backview size {out.shape}"

    def c_backview_missing_depth():
        payload = {
            "input_image": imaging.b64_png(np.zeros((16, 16, 3))),
            "normal": imaging.b64_png(np.zeros((16, 16, 3), dtype=np.uint8)),
            "silhouette": imaging.b64_png(np.zeros((16, 16), dtype=np.uint8)),
            "prompt": "p", "seed": 1,
        }
        r = post("/backview", payload)
        assert r.status_code == 400, f"missing depth -> {r.status_code}, want 400"

    check("health", c_health)
    check("inpaint_roundtrip", c_inpaint_roundtrip)
    check("known_region_preserved", c_known_region)
    check("malformed_returns_400", c_malformed_400)
    check("size_mismatch_returns_422", c_mismatch_422)
    check("backview", c_backview)
    check("backview_missing_depth_400", c_backview_missing_depth)
    return results
