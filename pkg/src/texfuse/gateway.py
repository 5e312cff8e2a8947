"""Pluggable shape-guided inpainting boundary.

The pipeline talks to any backend through InpaintRequest/InpaintResponse.
Two deterministic local backends cover testing (a ground-truth oracle and a
diffusion-free neighbor-averaging fill); RemoteBackend speaks the HTTP
protocol of the real synthesis service. Mask polarity throughout: 255 means
keep the pixel, 0 means synthesize it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import requests

from . import imaging

KNOWN_REGION_TOLERANCE = 2.0 / 255.0
DEFAULT_GUIDANCE_SCALE = 15.0
DEFAULT_STEPS = 25

PROMPT_TEMPLATE = ("a person wearing nice clothes in front of a solid white "
                   "background, {view} view, best quality, extremely detailed")
BACK_INIT_PROMPT = ("back view of a person wearing nice clothes in front of "
                    "a solid gray background, best quality")

_GRID_AZIMUTHS = (0.0, 45.0, -45.0, 90.0, -90.0, 135.0, -135.0, 180.0)


class BackendError(RuntimeError):
    """Base class for inpainting backend failures."""


class BackendUnreachable(BackendError):
    """The backend could not be contacted (connection or timeout)."""


class BackendProtocolError(BackendError):
    """The backend answered with a malformed or non-success payload."""


class ResponseRejected(BackendError):
    """The backend response violates a response invariant."""


def normalize_azimuth(azimuth: float) -> float:
    """Wrap an azimuth into (-180, 180]."""
    az = float(azimuth) % 360.0
    if az > 180.0:
        az -= 360.0
    return az


def view_label(azimuth: float) -> str:
    """Viewing-direction word used in the prompt for a grid azimuth."""
    az = normalize_azimuth(azimuth)
    if az not in _GRID_AZIMUTHS:
        az = min(_GRID_AZIMUTHS, key=lambda g: (abs(g - az), abs(g)))
    if az == 45.0:
        return "left"
    if az == -45.0:
        return "right"
    if abs(az) == 90.0:
        return "side"
    if abs(az) in (135.0, 180.0):
        return "back"
    return "front"


def view_prompt(azimuth: float, style: str = "front_pipeline") -> str:
    """Fixed text prompt for a view; non-grid azimuths map to the nearest grid view."""
    if style == "front_pipeline":
        return PROMPT_TEMPLATE.format(view=view_label(azimuth))
    if style == "back_init":
        return BACK_INIT_PROMPT
    raise ValueError(f"unknown prompt style: {style!r}")


@dataclass
class InpaintRequest:
    """One view-completion job. Images are float RGB in [0,1]; masks uint8."""

    blended: np.ndarray          # (H, W, 3) with unknown pixels pre-filled white
    known_mask: np.ndarray       # (H, W) uint8, 255 = keep
    normal_map: np.ndarray       # (H, W, 3) uint8 camera-space encoding
    silhouette: np.ndarray       # (H, W) uint8, 255 = surface
    prompt: str
    negative_prompt: str = ""
    seed: int = 0
    guidance_scale: float = DEFAULT_GUIDANCE_SCALE
    steps: int = DEFAULT_STEPS
    view_azimuth: float = 0.0
    guidance: str = "both"       # none | normal | silhouette | both

    def __post_init__(self):
        shape = self.blended.shape[:2]
        for name in ("known_mask", "normal_map", "silhouette"):
            if getattr(self, name).shape[:2] != shape:
                raise ValueError(f"{name} size does not match blended image")


@dataclass
class InpaintResponse:
    image: np.ndarray
    backend_id: str
    elapsed_ms: int = 0


@dataclass
class BackViewRequest:
    """Inputs for synthesizing the initial opposite view of the subject."""

    input_image: np.ndarray      # (H, W, 3) float, the accepted front view
    normal_map: np.ndarray       # (H, W, 3) uint8
    depth: np.ndarray            # (H, W) uint16, near = high
    silhouette: np.ndarray       # (H, W) uint8
    prompt: str = BACK_INIT_PROMPT
    seed: int = 0


def _check_response(request: InpaintRequest, image: np.ndarray,
                    strict: bool = True) -> np.ndarray:
    if image.shape[:2] != request.blended.shape[:2]:
        raise ResponseRejected(
            f"backend returned size {image.shape[1]}x{image.shape[0]}, "
            f"expected {request.blended.shape[1]}x{request.blended.shape[0]}")
    keep = request.known_mask >= 128
    if keep.any():
        dev = np.abs(image[keep] - request.blended[keep]).max()
        if dev > KNOWN_REGION_TOLERANCE + 1e-9:
            if strict:
                raise ResponseRejected(
                    f"backend modified known pixels by {dev:.4f} "
                    f"(> {KNOWN_REGION_TOLERANCE:.4f})")
            image = image.copy()
            image[keep] = request.blended[keep]
    return image


def inpaint(request: InpaintRequest, backend, strict: bool = True) -> InpaintResponse:
    """Dispatch a request to a backend and validate the response invariants.

    Strict mode rejects responses that drift in the known region; lenient
    mode composites the known pixels back instead.
    """
    t0 = time.perf_counter()
    response = backend.inpaint(request)
    image = _check_response(request, response.image, strict=strict)
    elapsed = response.elapsed_ms or int((time.perf_counter() - t0) * 1000)
    return InpaintResponse(image=image, backend_id=response.backend_id,
                           elapsed_ms=elapsed)


class OracleBackend:
    """Test double answering with pre-rendered ground-truth views.

    The ground truth is composited under the known region, so accepted
    responses always satisfy the known-pixel invariant exactly.
    """

    backend_id = "oracle"

    def __init__(self, ground_truth_views: dict):
        self._views = {normalize_azimuth(az): np.asarray(img, dtype=np.float64)
                       for az, img in ground_truth_views.items()}

    def _lookup(self, azimuth: float, shape) -> np.ndarray:
        az = normalize_azimuth(azimuth)
        if az not in self._views:
            raise BackendError(f"oracle has no ground-truth view at azimuth {az}")
        gt = self._views[az]
        if gt.shape[:2] != tuple(shape):
            gt = imaging.resize_bilinear(gt, (shape[1], shape[0]))
        return gt

    def inpaint(self, request: InpaintRequest) -> InpaintResponse:
        gt = self._lookup(request.view_azimuth, request.blended.shape[:2])
        keep = request.known_mask >= 128
        out = gt.copy()
        out[keep] = request.blended[keep]
        return InpaintResponse(image=out, backend_id=self.backend_id)

    def back_view(self, request: BackViewRequest) -> np.ndarray:
        return self._lookup(180.0, request.input_image.shape[:2]).copy()


class DiffuseFillBackend:
    """Dependency-free smoke backend: iterative neighbor averaging.

    Unknown silhouette pixels relax toward the mean of their in-silhouette
    neighbors until the largest per-pixel change drops below 1/255 (capped
    at 10k sweeps). Background pixels stay white.
    """

    backend_id = "diffuse-fill"
    max_iterations = 10_000

    def _fill(self, image: np.ndarray, keep: np.ndarray, region: np.ndarray) -> np.ndarray:
        # averages only ever draw from pixels that already carry a color
        # (known pixels, then the advancing fill front), so the white
        # placeholder in the unknown region never contaminates the result
        out = image.copy()
        unknown = region & ~keep
        if not unknown.any():
            return out
        filled = keep & region
        for _ in range(self.max_iterations):
            fm = filled.astype(np.float64)
            padded = np.pad(out * fm[:, :, None], ((1, 1), (1, 1), (0, 0)))
            pmask = np.pad(fm, 1)
            nb_sum = (padded[:-2, 1:-1] + padded[2:, 1:-1]
                      + padded[1:-1, :-2] + padded[1:-1, 2:])
            nb_cnt = (pmask[:-2, 1:-1] + pmask[2:, 1:-1]
                      + pmask[1:-1, :-2] + pmask[1:-1, 2:])
            upd = unknown & (nb_cnt > 0)
            if not upd.any():
                break
            new = nb_sum[upd] / nb_cnt[upd][:, None]
            delta = np.abs(new - out[upd]).max()
            front_active = (upd & ~filled).any()
            out[upd] = new
            filled |= upd
            if delta < 1.0 / 255.0 and not front_active:
                break
        return out

    def inpaint(self, request: InpaintRequest) -> InpaintResponse:
        keep = request.known_mask >= 128
        region = request.silhouette >= 128
        out = self._fill(request.blended, keep, region)
        out[keep] = request.blended[keep]
        return InpaintResponse(image=out, backend_id=self.backend_id)

    def back_view(self, request: BackViewRequest) -> np.ndarray:
        # the opposite orthographic view has the mirrored silhouette, so a
        # horizontal flip of the input seeds plausible colors; leftover
        # uncovered pixels diffuse from there
        region = request.silhouette >= 128
        flipped = request.input_image[:, ::-1]
        white = np.mean(flipped, axis=2) > 0.98
        keep = region & ~white
        canvas = np.ones_like(request.input_image)
        canvas[keep] = flipped[keep]
        out = self._fill(canvas, keep, region)
        out[~region] = 1.0
        return out


class RemoteBackend:
    """HTTP client for the shape-guided synthesis service."""

    def __init__(self, endpoint: str, timeout_ms: int = 120_000, retries: int = 1):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout_ms / 1000.0
        self.retries = max(1, retries)
        self.backend_id = f"remote:{self.endpoint}"

    def _post(self, path: str, payload: dict) -> dict:
        last: Exception | None = None
        for _ in range(self.retries):
            try:
                resp = requests.post(self.endpoint + path, json=payload,
                                     timeout=self.timeout)
            except requests.Timeout as exc:
                last = BackendUnreachable(f"timeout contacting {self.endpoint}{path}")
                last.__cause__ = exc
                continue
            except requests.ConnectionError as exc:
                last = BackendUnreachable(f"cannot reach {self.endpoint}{path}")
                last.__cause__ = exc
                continue
            if resp.status_code != 200:
                raise BackendProtocolError(
                    f"{path} returned HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise BackendProtocolError(f"{path} returned non-JSON body") from exc
        raise last  # type: ignore[misc]

    def inpaint(self, request: InpaintRequest) -> InpaintResponse:
        payload = {
            "image": imaging.b64_png(request.blended),
            "known_mask": imaging.b64_png(request.known_mask),
            "normal": imaging.b64_png(request.normal_map),
            "silhouette": imaging.b64_png(request.silhouette),
            "prompt": request.prompt,
            "negative_prompt": request.negative_prompt,
            "seed": int(request.seed),
            "guidance_scale": float(request.guidance_scale),
            "steps": int(request.steps),
            "azimuth": float(request.view_azimuth),
            "guidance": request.guidance,
        }
        body = self._post("/inpaint", payload)
        try:
            image = imaging.from_uint8(imaging.from_b64_png(body["image"]))
            backend_id = str(body["backend_id"])
            elapsed = int(body.get("elapsed_ms", 0))
        except (KeyError, ValueError) as exc:
            raise BackendProtocolError(f"malformed /inpaint response: {exc}") from exc
        return InpaintResponse(image=image, backend_id=backend_id, elapsed_ms=elapsed)

    def back_view(self, request: BackViewRequest) -> np.ndarray:
        payload = {
            "input_image": imaging.b64_png(request.input_image),
            "normal": imaging.b64_png(request.normal_map),
            "depth": imaging.b64_png(request.depth, bit16=True),
            "silhouette": imaging.b64_png(request.silhouette),
            "prompt": request.prompt,
            "seed": int(request.seed),
        }
        body = self._post("/backview", payload)
        try:
            return imaging.from_uint8(imaging.from_b64_png(body["image"]))
        except (KeyError, ValueError) as exc:
            raise BackendProtocolError(f"malformed /backview response: {exc}") from exc

    def health(self) -> dict:
        try:
            resp = requests.get(self.endpoint + "/health", timeout=self.timeout)
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise BackendUnreachable(f"cannot reach {self.endpoint}/health") from exc
        if resp.status_code != 200:
            raise BackendProtocolError(f"/health returned HTTP {resp.status_code}")
        return resp.json()
