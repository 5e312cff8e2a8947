"""Diffusion-free smoke demo: synthesize views of a striped capsule with the
neighbor-averaging fill backend and export the fused mesh. No ground truth
or external service needed.

Usage: python scripts/demo_diffuse_fill.py [workdir]
"""

import sys

from texfuse import cli, imaging
from texfuse.fuse import FuseConfig, export_textured_mesh, optimize_texture
from texfuse.gateway import DiffuseFillBackend
from texfuse.meshes import load_mesh
from texfuse.pipeline import PipelineConfig, synthesize_all_views


def main() -> int:
    workdir = sys.argv[1] if len(sys.argv) > 1 else "diffuse_fill_out"
    fixture = f"{workdir}/fixture"
    cli.main(["gen-mesh", "capsule", "12", "stripes", "--out", fixture,
              "--size", "256"])
    mesh = load_mesh(f"{fixture}/mesh.obj")
    input_image = imaging.load_png(f"{fixture}/input.png")

    config = PipelineConfig(image_size=(256, 256), base_seed=1,
                            fuse=FuseConfig(iterations=80, resolution=(256, 256)))
    result = synthesize_all_views(mesh, input_image, config,
                                  DiffuseFillBackend(), out_dir=f"{workdir}/run")
    texture, _ = optimize_texture(mesh, result.views, config.fuse)
    export_textured_mesh(mesh, texture, f"{workdir}/fused.obj")
    print(f"fused mesh written to {workdir}/fused.obj")
    return 0


if __name__ == "__main__":
    sys.exit(main())
