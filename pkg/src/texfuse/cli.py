"""Command-line operator surface.

Subcommands: ``gen-mesh`` (test fixtures with ground truth), ``synthesize``
(view synthesis + texture fusion), ``eval`` (turntable PSNR/SSIM with CI
thresholds), ``serve-mock`` (protocol mock server), and ``conformance``
(protocol checks against a live URL). Every command is non-interactive and
writes only under its output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import imaging
from .fuse import FuseConfig, TextureMap, export_textured_mesh, optimize_texture
from .gateway import DiffuseFillBackend, OracleBackend, RemoteBackend
from .meshes import generate_test_mesh, load_mesh, save_obj
from .metrics import turntable_eval
from .mockserver import MockServer, load_ground_truth_views, run_conformance_suite
from .pipeline import PipelineConfig, synthesize_all_views
from .raster import RenderSettings, make_turntable_camera, render_textured

GRID_AZIMUTHS = (0, 45, -45, 90, -90, 135, -135, 180)
ENV_BACKEND_URL = "TEXFUSE_BACKEND_URL"


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_pattern_texture(pattern: str, resolution: int = 256) -> TextureMap:
    """Deterministic ground-truth texture: checker, stripes, or solid."""
    n = resolution
    texels = np.zeros((n, n, 3), dtype=np.float64)
    if pattern == "checker":
        cell = max(1, n // 16)
        jj, ii = np.meshgrid(np.arange(n) // cell, np.arange(n) // cell, indexing="ij")
        odd = (jj + ii) % 2 == 1
        texels[:] = (0.9, 0.85, 0.2)
        texels[odd] = (0.15, 0.25, 0.7)
    elif pattern == "stripes":
        band = max(1, n // 16)
        palette = np.array([(0.85, 0.2, 0.2), (0.2, 0.7, 0.3), (0.25, 0.3, 0.85)])
        rows = (np.arange(n) // band) % len(palette)
        texels[:] = palette[rows][:, None, :]
    elif pattern == "solid":
        texels[:] = (0.75, 0.3, 0.25)
    else:
        raise ValueError(f"unknown texture pattern: {pattern!r}")
    return TextureMap(texels=texels)


def cmd_gen_mesh(args) -> int:
    out = args.out
    os.makedirs(os.path.join(out, "views"), exist_ok=True)
    mesh = generate_test_mesh(args.kind, args.subdivision)
    texture = make_pattern_texture(args.pattern, args.texture_resolution)

    mesh_path = os.path.join(out, "mesh.obj")
    save_obj(mesh, mesh_path, mtl_name="material0", texture_filename="texture_gt.png")
    texture.save_png(os.path.join(out, "texture_gt.png"))

    settings = RenderSettings(image_size=(args.size, args.size))
    view_files = []
    for az in GRID_AZIMUTHS:
        camera = make_turntable_camera(az, settings)
        img = render_textured(mesh, texture, camera)
        name = f"view_{az:+04d}.png"
        imaging.save_png(os.path.join(out, "views", name), img)
        view_files.append(os.path.join("views", name))
    # convenience copy of the azimuth-0 render as the pipeline input
    input_path = os.path.join(out, "input.png")
    imaging.save_png(input_path, imaging.load_png(os.path.join(out, "views", "view_+000.png")))

    manifest = {
        "kind": args.kind,
        "subdivision": args.subdivision,
        "pattern": args.pattern,
        "image_size": args.size,
        "texture_resolution": args.texture_resolution,
        "seed": args.seed,
        "files": {
            "mesh": "mesh.obj",
            "texture_gt": "texture_gt.png",
            "input": "input.png",
            "views": view_files,
        },
        "hashes": {
            "mesh.obj": _sha256_file(mesh_path),
            "texture_gt.png": _sha256_file(os.path.join(out, "texture_gt.png")),
        },
    }
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    print(f"wrote {args.kind} fixture to {out}")
    return 0


def build_backend(spec: str | None):
    """Backend factory for --backend {oracle:DIR, fill, remote:URL}."""
    if spec is None:
        url = os.environ.get(ENV_BACKEND_URL)
        if not url:
            raise SystemExit(
                f"no backend: pass --backend or set {ENV_BACKEND_URL}")
        return RemoteBackend(url)
    if spec == "fill":
        return DiffuseFillBackend()
    if spec.startswith("oracle:"):
        root = spec[len("oracle:"):]
        views_dir = os.path.join(root, "views")
        return OracleBackend(load_ground_truth_views(
            views_dir if os.path.isdir(views_dir) else root))
    if spec.startswith("remote:"):
        return RemoteBackend(spec[len("remote:"):])
    raise SystemExit(f"unknown backend spec: {spec!r}")


def load_run_config(args) -> PipelineConfig:
    if args.config:
        try:
            config = PipelineConfig.from_toml(args.config)
        except FileNotFoundError:
            raise SystemExit(f"config file not found: {args.config}")
        except ValueError as exc:
            raise SystemExit(f"config error in {args.config}: {exc}")
    else:
        config = PipelineConfig()
    if args.seed is not None:
        config.base_seed = args.seed
    if args.no_back_init:
        config.back_view_source = "none"
    elif args.back_view:
        config.back_view_source = args.back_view
    if args.guidance:
        config.guidance = args.guidance
    return config


def cmd_synthesize(args) -> int:
    config = load_run_config(args)
    backend = build_backend(args.backend)
    mesh = load_mesh(args.mesh)
    input_image = imaging.load_png(args.input)

    run_id = hashlib.sha256(
        json.dumps(config.to_json_dict(), sort_keys=True).encode()
        + _sha256_file(args.mesh).encode()
        + _sha256_file(args.input).encode()).hexdigest()[:12]
    run_dir = os.path.join(args.out, run_id)
    os.makedirs(run_dir, exist_ok=True)

    t_start = time.perf_counter()
    result = synthesize_all_views(mesh, input_image, config, backend, out_dir=run_dir)
    t_views = time.perf_counter()

    manifest = {
        "config": config.to_json_dict(),
        "inputs": {
            "mesh": {"path": os.path.abspath(args.mesh), "sha256": _sha256_file(args.mesh)},
            "image": {"path": os.path.abspath(args.input), "sha256": _sha256_file(args.input)},
        },
        "backend": getattr(backend, "backend_id", type(backend).__name__),
        "views_only": bool(args.views_only),
        "request_log": [
            {"azimuth": e.azimuth, "prompt": e.prompt, "seed": e.seed,
             "backend_id": e.backend_id, "skipped": e.skipped}
            for e in result.request_log
        ],
        "artifacts": sorted(
            os.path.relpath(os.path.join(r, f), run_dir)
            for r, _, files in os.walk(run_dir) for f in files),
        "timings": {"views_s": t_views - t_start},
    }

    if not args.views_only:
        fuse_dir = os.path.join(run_dir, "fused")
        os.makedirs(fuse_dir, exist_ok=True)
        config.fuse.trace_path = os.path.join(fuse_dir, "loss_trace.csv")
        texture, _ = optimize_texture(mesh, result.views, config.fuse)
        export_textured_mesh(mesh, texture, os.path.join(fuse_dir, "mesh.obj"))
        manifest["timings"]["fuse_s"] = time.perf_counter() - t_views
        manifest["artifacts"] = sorted(
            os.path.relpath(os.path.join(r, f), run_dir)
            for r, _, files in os.walk(run_dir) for f in files)

    with open(os.path.join(run_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    print(f"run complete: {run_dir}")
    return 0


def cmd_eval(args) -> int:
    mesh = load_mesh(args.mesh)
    texture = TextureMap.load_png(args.texture)
    gt_mesh = load_mesh(os.path.join(args.gt, "mesh.obj"))
    gt_texture = TextureMap.load_png(os.path.join(args.gt, "texture_gt.png"))
    settings = RenderSettings(image_size=(args.size, args.size))

    def provider(az: float):
        return render_textured(gt_mesh, gt_texture, make_turntable_camera(az, settings))

    report = turntable_eval(mesh, texture, provider, n_views=args.n_views,
                            spacing=args.spacing, settings=settings,
                            mask_to_silhouette=args.mask_silhouette)
    print(report.format_table())
    if args.report:
        report.write_csv(args.report)
    failed = False
    if args.min_psnr is not None and report.mean_psnr < args.min_psnr:
        print(f"FAIL: mean PSNR {report.mean_psnr:.3f} dB < {args.min_psnr}")
        failed = True
    if args.min_ssim is not None and report.mean_ssim < args.min_ssim:
        print(f"FAIL: mean SSIM {report.mean_ssim:.4f} < {args.min_ssim}")
        failed = True
    return 1 if failed else 0


def cmd_serve_mock(args) -> int:
    server = MockServer(port=args.port, gt_dir=args.gt)
    print(f"mock synthesis service on {server.url} "
          f"({'oracle' if args.gt else 'diffuse-fill'} logic)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_conformance(args) -> int:
    results = run_conformance_suite(args.url)
    ok = True
    for name, passed, detail in results:
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {name}"
        if detail:
            line += f": {detail}"
        print(line)
        ok = ok and passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texfuse",
        description="360-degree textured mesh reconstruction from one posed view")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-mesh", help="generate a test mesh with ground truth")
    g.add_argument("kind", choices=["uv_sphere", "cube", "capsule"])
    g.add_argument("subdivision", type=int)
    g.add_argument("pattern", choices=["checker", "stripes", "solid"])
    g.add_argument("--out", required=True)
    g.add_argument("--size", type=int, default=512, help="rendered view size")
    g.add_argument("--texture-resolution", type=int, default=256)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_mesh)

    s = sub.add_parser("synthesize", help="synthesize views and fuse a texture")
    s.add_argument("--mesh", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--config", help="TOML config file")
    s.add_argument("--backend", help="oracle:DIR | fill | remote:URL "
                                     f"(default: remote via ${ENV_BACKEND_URL})")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="runs")
    s.add_argument("--views-only", action="store_true",
                   help="stop after view synthesis, skip fusion")
    s.add_argument("--no-back-init", action="store_true",
                   help="start from the input view alone")
    s.add_argument("--back-view", help="file:<path> or backend")
    s.add_argument("--guidance", choices=["none", "normal", "silhouette", "both"])
    s.set_defaults(func=cmd_synthesize)

    e = sub.add_parser("eval", help="turntable PSNR/SSIM against ground truth")
    e.add_argument("--mesh", required=True)
    e.add_argument("--texture", required=True)
    e.add_argument("--gt", required=True, help="gen-mesh output directory")
    e.add_argument("--n-views", type=int, default=90)
    e.add_argument("--spacing", type=float, default=4.0)
    e.add_argument("--size", type=int, default=512)
    e.add_argument("--report", help="CSV output path")
    e.add_argument("--min-psnr", type=float)
    e.add_argument("--min-ssim", type=float)
    e.add_argument("--mask-silhouette", action="store_true")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("serve-mock", help="serve the inpainting protocol locally")
    m.add_argument("--port", type=int, default=8675)
    m.add_argument("--gt", help="gen-mesh output dir for oracle responses")
    m.set_defaults(func=cmd_serve_mock)

    c = sub.add_parser("conformance", help="probe a server for protocol conformance")
    c.add_argument("--url", required=True)
    c.set_defaults(func=cmd_conformance)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
