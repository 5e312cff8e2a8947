"""texfuse: 360-degree textured mesh reconstruction from a single posed view.

The engine grows a support set of views around a fixed mesh by blending
already-known views into each new target and completing the gaps with a
pluggable shape-guided inpainting backend, then fuses all views into one UV
texture map by inverse rendering.
"""

__version__ = "0.1.0"

from .meshes import TriangleMesh, compute_vertex_normals, generate_test_mesh, load_mesh
from .raster import (Camera, RenderSettings, ViewBuffers, make_turntable_camera,
                     rasterize, render_normal_map, render_silhouette,
                     render_textured, visible_face_set)
from .aggregate import (AggregationParams, BlendResult, SupportView,
                        aggregate_views, blend_weights, distance_transform)
from .gateway import (BackViewRequest, DiffuseFillBackend, InpaintRequest,
                      InpaintResponse, OracleBackend, RemoteBackend, inpaint,
                      view_prompt)
from .pipeline import (MultiViewSet, PipelineConfig, SynthesisResult,
                       initialize_back_view, synthesize_all_views)
from .fuse import (FuseConfig, OptState, TextureMap, adam_step,
                   bake_initial_texture, export_textured_mesh, l1_loss,
                   optimize_texture, perceptual_proxy_loss, render_with_gradient)
from .metrics import EvalReport, psnr, ssim, turntable_eval
