"""Synthesis engines behind the service endpoints.

DiffusersEngine wraps a pretrained latent inpainting pipeline with two
control adapters (surface-normal and silhouette/edge conditioning); it needs
model weights and the optional `real` dependencies. ProceduralEngine is a
deterministic, dependency-free stand-in honoring the same request semantics
(seeded output, guidance modes, background from the prompt), used for
protocol conformance and smoke testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .config import ServiceConfig


class EngineUnavailable(RuntimeError):
    """The engine cannot load (missing dependencies or weights)."""


@dataclass
class InpaintJob:
    image: np.ndarray        # (H, W, 3) uint8
    known_mask: np.ndarray   # (H, W) uint8, 255 = keep
    normal: np.ndarray       # (H, W, 3) uint8
    silhouette: np.ndarray   # (H, W) uint8
    prompt: str
    negative_prompt: str
    seed: int
    guidance_scale: float
    steps: int
    azimuth: float
    guidance: str            # none | normal | silhouette | both


@dataclass
class BackViewJob:
    input_image: np.ndarray  # (H, W, 3) uint8
    normal: np.ndarray       # (H, W, 3) uint8
    depth: np.ndarray        # (H, W) uint16, near = high
    silhouette: np.ndarray   # (H, W) uint8
    prompt: str
    seed: int


def _background_from_prompt(prompt: str) -> np.ndarray:
    if "gray" in prompt.lower():
        return np.array([128, 128, 128], dtype=np.uint8)
    return np.array([255, 255, 255], dtype=np.uint8)


def _smooth_noise(seed: int, shape: tuple[int, int], cells: int = 8) -> np.ndarray:
    """Seeded low-frequency RGB field in [0,1], bilinearly upsampled."""
    rng = np.random.default_rng(seed)
    coarse = (rng.random((cells, cells, 3)) * 255).astype(np.uint8)
    im = Image.fromarray(coarse, mode="RGB").resize(
        (shape[1], shape[0]), resample=Image.BILINEAR)
    return np.asarray(im, dtype=np.float64) / 255.0


class ProceduralEngine:
    """Deterministic guidance-aware texture synthesis (no model weights)."""

    def __init__(self, config: ServiceConfig):
        self.config = config

    @property
    def model_identity(self) -> str:
        return "procedural"

    def load(self) -> None:
        pass

    def _shading(self, normal: np.ndarray) -> np.ndarray:
        n = normal.astype(np.float64) / 255.0 * 2.0 - 1.0
        light = np.array([0.3, 0.4, 0.866])
        lam = np.clip(n @ light, 0.0, 1.0)
        return 0.35 + 0.65 * lam

    def inpaint(self, job: InpaintJob) -> np.ndarray:
        h, w = job.image.shape[:2]
        base = _smooth_noise(job.seed, (h, w))
        shading = self._shading(job.normal)
        bg = _background_from_prompt(job.prompt)
        region = job.silhouette >= 128

        synth = np.empty((h, w, 3), dtype=np.float64)
        if job.guidance in ("both", "normal"):
            synth[:] = base * shading[:, :, None]
        else:
            synth[:] = base
        out = np.empty((h, w, 3), dtype=np.float64)
        if job.guidance in ("both", "silhouette"):
            out[:] = bg / 255.0
            out[region] = synth[region]
        else:
            out[:] = synth
        result = np.round(out * 255.0).astype(np.uint8)
        keep = job.known_mask >= 128
        result[keep] = job.image[keep]
        return result

    def back_view(self, job: BackViewJob) -> np.ndarray:
        h, w = job.input_image.shape[:2]
        base = _smooth_noise(job.seed, (h, w))
        shading = self._shading(job.normal)
        depth = job.depth.astype(np.float64) / 65535.0
        bg = _background_from_prompt(job.prompt)
        region = job.silhouette >= 128
        out = np.empty((h, w, 3), dtype=np.float64)
        out[:] = bg / 255.0
        lit = base * (shading * (0.7 + 0.3 * depth))[:, :, None]
        out[region] = lit[region]
        return np.round(out * 255.0).astype(np.uint8)


class DiffusersEngine:
    """Latent inpainting diffusion with multi-adapter shape conditioning.

    Loads the configured inpainting checkpoint plus two control adapters and
    runs mask inpainting with the fill mask = inverse of the known mask,
    conditioning on the normal map and silhouette simultaneously. Requires
    the `real` extra and downloadable weights.
    """

    def __init__(self, config: ServiceConfig):
        self.config = config
        self._pipe = None
        self._controlnets = None

    @property
    def model_identity(self) -> str:
        return self.config.model_identity()

    def load(self) -> None:
        try:
            import torch
            from diffusers import (ControlNetModel,
                                   StableDiffusionControlNetInpaintPipeline)
        except ImportError as exc:
            raise EngineUnavailable(
                f"diffusers engine needs the 'real' extra: {exc}") from exc
        try:
            dtype = torch.float16 if self.config.device.startswith("cuda") else torch.float32
            normal_net = ControlNetModel.from_pretrained(
                self.config.normal_adapter, torch_dtype=dtype)
            sil_net = ControlNetModel.from_pretrained(
                self.config.silhouette_adapter, torch_dtype=dtype)
            pipe = StableDiffusionControlNetInpaintPipeline.from_pretrained(
                self.config.inpaint_model, controlnet=[normal_net, sil_net],
                torch_dtype=dtype, safety_checker=None)
            pipe = pipe.to(self.config.device)
            self._pipe = pipe
            self._controlnets = (normal_net, sil_net)
        except Exception as exc:
            raise EngineUnavailable(f"could not load model weights: {exc}") from exc

    def _run_pipeline(self, prompt, negative_prompt, image, mask, controls,
                      scales, seed, guidance_scale, steps, size):
        import torch
        from diffusers import ControlNetModel  # noqa: F401  (loaded in load())

        generator = torch.Generator(device=self.config.device).manual_seed(int(seed))
        result = self._pipe(
            prompt=prompt,
            negative_prompt=negative_prompt or None,
            image=image,
            mask_image=mask,
            control_image=controls,
            controlnet_conditioning_scale=scales,
            num_inference_steps=int(steps),
            guidance_scale=float(guidance_scale),
            generator=generator,
            width=size[0], height=size[1],
        )
        return np.asarray(result.images[0].convert("RGB"), dtype=np.uint8)

    @staticmethod
    def _pad8(img: Image.Image) -> tuple[Image.Image, tuple[int, int]]:
        w, h = img.size
        w8, h8 = (w + 7) // 8 * 8, (h + 7) // 8 * 8
        if (w8, h8) == (w, h):
            return img, (w, h)
        canvas = Image.new(img.mode, (w8, h8))
        canvas.paste(img, (0, 0))
        return canvas, (w, h)

    def inpaint(self, job: InpaintJob) -> np.ndarray:
        if self._pipe is None:
            raise EngineUnavailable("model not loaded")
        h, w = job.image.shape[:2]
        image, orig = self._pad8(Image.fromarray(job.image, "RGB"))
        # diffusion mask convention: white = synthesize
        fill = Image.fromarray(255 - job.known_mask, "L")
        fill, _ = self._pad8(fill)
        normal, _ = self._pad8(Image.fromarray(job.normal, "RGB"))
        sil_rgb = np.repeat(job.silhouette[:, :, None], 3, axis=2)
        sil, _ = self._pad8(Image.fromarray(sil_rgb, "RGB"))
        on = {"none": (0.0, 0.0), "normal": (1.0, 0.0),
              "silhouette": (0.0, 1.0), "both": (1.0, 1.0)}[job.guidance]
        out = self._run_pipeline(job.prompt, job.negative_prompt, image, fill,
                                 [normal, sil], list(on), job.seed,
                                 job.guidance_scale, job.steps, image.size)
        out = out[:h, :w]
        keep = job.known_mask >= 128
        out = out.copy()
        out[keep] = job.image[keep]
        return out

    def back_view(self, job: BackViewJob) -> np.ndarray:
        if self._pipe is None:
            raise EngineUnavailable("model not loaded")
        h, w = job.input_image.shape[:2]
        blank = Image.new("RGB", (w, h), (128, 128, 128))
        image, _ = self._pad8(blank)
        fill, _ = self._pad8(Image.fromarray(np.full((h, w), 255, np.uint8), "L"))
        normal, _ = self._pad8(Image.fromarray(job.normal, "RGB"))
        depth8 = (job.depth.astype(np.float64) / 65535.0 * 255.0).astype(np.uint8)
        depth_rgb = np.repeat(depth8[:, :, None], 3, axis=2)
        depth, _ = self._pad8(Image.fromarray(depth_rgb, "RGB"))
        out = self._run_pipeline(job.prompt, "", image, fill, [normal, depth],
                                 [1.0, 1.0], job.seed,
                                 self.config.guidance_scale, self.config.steps,
                                 image.size)
        return out[:h, :w]


def build_engine(config: ServiceConfig):
    if config.engine == "procedural":
        return ProceduralEngine(config)
    if config.engine == "diffusers":
        return DiffusersEngine(config)
    raise ValueError(f"unknown engine: {config.engine!r}")
