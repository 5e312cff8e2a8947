"""View synthesis orchestration.

Starting from the input view (and usually a synthesized opposite view), the
pipeline walks a fixed azimuth schedule; at each stop it blends everything
already known into the target view, asks the inpainting backend to complete
the unknown region under normal + silhouette guidance, and adds the accepted
result to the support set. The final schedule stop at 180 degrees replaces
the initial back view.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import imaging
from .aggregate import AggregationParams, BlendResult, SupportView, aggregate_views
from .fuse import FuseConfig
from .gateway import (BACK_INIT_PROMPT, BackendError, BackendUnreachable,
                      BackViewRequest, InpaintRequest, inpaint, view_prompt)
from .meshes import TriangleMesh
from .raster import (RenderSettings, make_turntable_camera, rasterize,
                     render_depth_16bit, render_normal_map, render_silhouette)

DEFAULT_SCHEDULE = (45.0, -45.0, 90.0, -90.0, 135.0, -135.0, 180.0)


class BackViewUnavailable(BackendError):
    """The configured back-view provider cannot supply an image."""


@dataclass
class PipelineConfig:
    """Knobs for one synthesis run; the defaults are the reference setup."""

    azimuth_schedule: tuple = DEFAULT_SCHEDULE
    alpha: float = 3.0
    beta: float = 3.0
    boundary_radius: int = 2
    image_size: tuple[int, int] = (512, 512)
    camera_scale: float | None = None
    base_seed: int = 0
    back_view_source: str = "backend"   # backend | file:<path> | none
    guidance: str = "both"              # none | normal | silhouette | both
    guidance_scale: float = 15.0
    steps: int = 25
    negative_prompt: str = ""
    skip_fully_known: bool = True
    known_region_policy: str = "strict"  # strict | composite
    debug_dumps: bool = False
    fuse: FuseConfig = field(default_factory=FuseConfig)

    def __post_init__(self):
        seen = set()
        for az in self.azimuth_schedule:
            if az == 0:
                raise ValueError("azimuth 0 is the input view; remove it from the schedule")
            if az in seen:
                raise ValueError(f"duplicate azimuth {az} in schedule")
            seen.add(az)

    def render_settings(self) -> RenderSettings:
        return RenderSettings(image_size=tuple(self.image_size), scale=self.camera_scale)

    def aggregation_params(self) -> AggregationParams:
        return AggregationParams(alpha=self.alpha, beta=self.beta,
                                 boundary_radius=self.boundary_radius)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["azimuth_schedule"] = list(self.azimuth_schedule)
        d["image_size"] = list(self.image_size)
        d["fuse"]["resolution"] = list(self.fuse.resolution)
        return d

    @classmethod
    def from_toml(cls, path) -> "PipelineConfig":
        import tomli
        with open(path, "rb") as f:
            data = tomli.load(f)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        pipeline = dict(data.get("pipeline", {}))
        fuse_d = dict(data.get("fuse", {}))
        known_pipeline = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        known_fuse = set(FuseConfig.__dataclass_fields__)
        for k in pipeline:
            if k not in known_pipeline:
                raise ValueError(f"unknown [pipeline] config field: {k!r}")
        for k in fuse_d:
            if k not in known_fuse:
                raise ValueError(f"unknown [fuse] config field: {k!r}")
        if "azimuth_schedule" in pipeline:
            pipeline["azimuth_schedule"] = tuple(pipeline["azimuth_schedule"])
        if "image_size" in pipeline:
            pipeline["image_size"] = tuple(pipeline["image_size"])
        if "resolution" in fuse_d:
            fuse_d["resolution"] = tuple(fuse_d["resolution"])
        return cls(fuse=FuseConfig(**fuse_d), **pipeline)


@dataclass
class MultiViewSet:
    """Ordered accepted views, input first, with per-view provenance."""

    views: list[SupportView] = field(default_factory=list)
    provenance: list[str] = field(default_factory=list)  # input | back_init | synthesized

    def append(self, view: SupportView, origin: str) -> None:
        self.views.append(view)
        self.provenance.append(origin)

    def azimuths(self) -> list[float]:
        return [v.camera.azimuth for v in self.views]

    def replace_azimuth(self, azimuth: float, view: SupportView, origin: str) -> None:
        for i, v in enumerate(self.views):
            if v.camera.azimuth == azimuth:
                del self.views[i]
                del self.provenance[i]
                break
        self.append(view, origin)

    def __len__(self) -> int:
        return len(self.views)


@dataclass
class RequestLogEntry:
    azimuth: float
    prompt: str
    seed: int
    backend_id: str
    elapsed_ms: int
    skipped: bool = False


@dataclass
class SynthesisResult:
    views: MultiViewSet
    blends: list[tuple[float, BlendResult]]
    request_log: list[RequestLogEntry]


def make_support_view(mesh: TriangleMesh, azimuth: float, image: np.ndarray,
                      settings: RenderSettings) -> SupportView:
    camera = make_turntable_camera(azimuth, settings)
    buffers = rasterize(mesh, camera)
    return SupportView(camera=camera, image=np.asarray(image, dtype=np.float64),
                       buffers=buffers)


def initialize_back_view(mesh: TriangleMesh, input_view: SupportView,
                         config: PipelineConfig, backend=None) -> SupportView:
    """Produce the opposite (180 degree) view before any scheduled synthesis.

    Sources: ``file:<path>`` loads a user-supplied image; ``backend`` asks
    the backend's back-view endpoint with rendered normal, depth, and
    silhouette guidance.
    """
    if input_view.camera.azimuth != 0.0:
        raise ValueError("input view must be registered at azimuth 0")
    source = config.back_view_source
    settings = config.render_settings()
    camera = make_turntable_camera(180.0, settings)
    buffers = rasterize(mesh, camera)

    if source == "none":
        raise BackViewUnavailable("back-view provider unavailable: source is 'none'")
    if source.startswith("file:"):
        image = imaging.load_png(source[len("file:"):])
        if image.shape[:2] != input_view.image.shape[:2]:
            raise ValueError("back-view image size does not match the run size")
    elif source == "backend":
        if backend is None or not hasattr(backend, "back_view"):
            raise BackViewUnavailable(
                "back-view provider unavailable: backend has no back-view support")
        request = BackViewRequest(
            input_image=input_view.image,
            normal_map=render_normal_map(buffers, camera),
            depth=render_depth_16bit(buffers),
            silhouette=render_silhouette(buffers),
            prompt=BACK_INIT_PROMPT,
            seed=config.base_seed,
        )
        try:
            image = backend.back_view(request)
        except BackendUnreachable as exc:
            raise BackViewUnavailable(f"back-view provider unavailable: {exc}") from exc
        if image.shape[:2] != input_view.image.shape[:2]:
            raise BackendError("back-view provider returned a mismatched size")
    else:
        raise ValueError(f"unknown back_view_source: {source!r}")
    return SupportView(camera=camera, image=np.asarray(image, dtype=np.float64),
                       buffers=buffers)


def synthesize_all_views(mesh: TriangleMesh, input_image: np.ndarray,
                         config: PipelineConfig, backend,
                         out_dir: str | None = None) -> SynthesisResult:
    """Run the full view schedule and return the grown support set.

    Views are synthesized strictly in schedule order; each accepted view
    joins the support set before the next is attempted. When a target view
    ends up entirely known from blending alone the backend call is skipped
    (configurable). Artifacts are flushed per view, so a backend failure
    leaves the completed prefix on disk.
    """
    settings = config.render_settings()
    w, h = settings.image_size
    if input_image.shape[:2] != (h, w):
        raise ValueError(
            f"input image is {input_image.shape[1]}x{input_image.shape[0]}, "
            f"configured size is {w}x{h}")

    views = MultiViewSet()
    views.append(make_support_view(mesh, 0.0, input_image, settings), "input")

    if config.back_view_source != "none":
        back = initialize_back_view(mesh, views.views[0], config, backend)
        views.append(back, "back_init")
        if out_dir:
            os.makedirs(os.path.join(out_dir, "back_init"), exist_ok=True)
            imaging.save_png(os.path.join(out_dir, "back_init", "result.png"), back.image)

    params = config.aggregation_params()
    blends: list[tuple[float, BlendResult]] = []
    request_log: list[RequestLogEntry] = []

    for index, azimuth in enumerate(config.azimuth_schedule):
        camera = make_turntable_camera(azimuth, settings)
        buffers = rasterize(mesh, camera)
        blend = aggregate_views(views.views, camera, mesh, params,
                                target_buffers=buffers,
                                keep_diagnostics=config.debug_dumps)
        blends.append((azimuth, blend))

        unknown = buffers.silhouette & ~blend.known_mask
        normal_map = render_normal_map(buffers, camera)
        silhouette = render_silhouette(buffers)
        known_mask = np.where(unknown, 0, 255).astype(np.uint8)
        prompt = view_prompt(azimuth, "front_pipeline")
        seed = config.base_seed + 1 + index

        t0 = time.perf_counter()
        if not unknown.any() and config.skip_fully_known:
            accepted = blend.blended
            entry = RequestLogEntry(azimuth=azimuth, prompt=prompt, seed=seed,
                                    backend_id="(skipped: fully known)",
                                    elapsed_ms=0, skipped=True)
        else:
            request = InpaintRequest(
                blended=blend.blended, known_mask=known_mask,
                normal_map=normal_map, silhouette=silhouette,
                prompt=prompt, negative_prompt=config.negative_prompt,
                seed=seed, guidance_scale=config.guidance_scale,
                steps=config.steps, view_azimuth=azimuth,
                guidance=config.guidance)
            try:
                response = inpaint(request, backend,
                                   strict=config.known_region_policy == "strict")
            except BackendError:
                if out_dir:
                    _write_view_artifacts(out_dir, azimuth, blend, normal_map,
                                          silhouette, known_mask, None, None)
                raise
            accepted = response.image
            entry = RequestLogEntry(
                azimuth=azimuth, prompt=prompt, seed=seed,
                backend_id=response.backend_id,
                elapsed_ms=int((time.perf_counter() - t0) * 1000))
        request_log.append(entry)

        new_view = SupportView(camera=camera, image=accepted, buffers=buffers)
        if azimuth == 180.0 and "back_init" in views.provenance:
            views.replace_azimuth(180.0, new_view, "synthesized")
        else:
            views.append(new_view, "synthesized")

        if out_dir:
            _write_view_artifacts(out_dir, azimuth, blend, normal_map,
                                  silhouette, known_mask, accepted, entry)

    return SynthesisResult(views=views, blends=blends, request_log=request_log)


def _azimuth_dirname(azimuth: float) -> str:
    return f"view_{int(round(azimuth)):+04d}"


def _write_view_artifacts(out_dir: str, azimuth: float, blend: BlendResult,
                          normal_map, silhouette, known_mask,
                          accepted, entry: RequestLogEntry | None) -> None:
    vdir = os.path.join(out_dir, _azimuth_dirname(azimuth))
    os.makedirs(vdir, exist_ok=True)
    imaging.save_png(os.path.join(vdir, "blend.png"), blend.blended)
    imaging.save_png(os.path.join(vdir, "known_mask.png"), known_mask)
    imaging.save_png(os.path.join(vdir, "normal.png"), normal_map)
    imaging.save_png(os.path.join(vdir, "silhouette.png"), silhouette)
    if accepted is not None:
        imaging.save_png(os.path.join(vdir, "result.png"), accepted)
    if entry is not None:
        meta = {"azimuth": entry.azimuth, "seed": entry.seed,
                "prompt": entry.prompt, "backend_id": entry.backend_id,
                "skipped": entry.skipped, "timings": {"elapsed_ms": entry.elapsed_ms}}
        with open(os.path.join(vdir, "meta.json"), "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
    if blend.per_view_weights is not None:
        dbg = os.path.join(vdir, "debug")
        os.makedirs(dbg, exist_ok=True)
        for name, stack in (("weight", blend.per_view_weights),
                            ("angle", blend.per_view_angle),
                            ("distance", blend.per_view_distance),
                            ("visible", blend.per_view_visibility)):
            for vi in range(stack.shape[0]):
                imaging.dump_float_buffer(
                    os.path.join(dbg, f"{name}_{vi:02d}.f32"),
                    stack[vi].astype(np.float32))


_VOLATILE_META_KEYS = {"timings", "elapsed_ms", "wall_time"}


def _canonical_json(obj):
    if isinstance(obj, dict):
        return {k: _canonical_json(v) for k, v in sorted(obj.items())
                if k not in _VOLATILE_META_KEYS}
    if isinstance(obj, list):
        return [_canonical_json(v) for v in obj]
    return obj


def rundir_hash(path: str) -> str:
    """Content hash of a run directory, excluding wall-clock fields.

    JSON files are canonicalized with volatile timing keys removed before
    hashing; everything else hashes raw bytes.
    """
    digest = hashlib.sha256()
    for root, dirs, files in os.walk(path):
        dirs.sort()
        for name in sorted(files):
            full = os.path.join(root, name)
            rel = os.path.relpath(full, path)
            digest.update(rel.encode())
            if name.endswith(".json"):
                with open(full) as f:
                    data = json.load(f)
                digest.update(json.dumps(_canonical_json(data), sort_keys=True).encode())
            else:
                with open(full, "rb") as f:
                    digest.update(f.read())
    return digest.hexdigest()
