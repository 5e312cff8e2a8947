import numpy as np
import pytest

from conftest import ground_truth_views
from texfuse import imaging
from texfuse.cli import make_pattern_texture
from texfuse.fuse import TextureMap
from texfuse.gateway import (BACK_INIT_PROMPT, BackendUnreachable,
                             DiffuseFillBackend, InpaintResponse, OracleBackend)
from texfuse.meshes import generate_test_mesh
from texfuse.metrics import psnr
from texfuse.pipeline import (BackViewUnavailable, PipelineConfig,
                              initialize_back_view, make_support_view,
                              rundir_hash, synthesize_all_views)
from texfuse.raster import (RenderSettings, make_turntable_camera, rasterize,
                            render_textured, visible_face_set)

GRID = (0, 45, -45, 90, -90, 135, -135, 180)
S128 = RenderSettings(image_size=(128, 128))


class RecordingBackend:
    """Wraps a backend and logs every call it actually receives."""

    def __init__(self, inner):
        self.inner = inner
        self.backend_id = f"recorded:{inner.backend_id}"
        self.inpaint_calls = []
        self.backview_calls = []

    def inpaint(self, request):
        self.inpaint_calls.append((request.view_azimuth, request.prompt, request.seed))
        return self.inner.inpaint(request)

    def back_view(self, request):
        self.backview_calls.append(request.prompt)
        return self.inner.back_view(request)


@pytest.fixture(scope="module")
def sphere_setup():
    mesh = generate_test_mesh("uv_sphere", 12)
    texture = make_pattern_texture("stripes", 64)
    gt = ground_truth_views(mesh, texture, GRID, S128)
    return mesh, texture, gt


def small_config(**kw):
    defaults = dict(image_size=(128, 128), base_seed=5)
    defaults.update(kw)
    return PipelineConfig(**defaults)


class TestConfig:
    def test_defaults_match_reference_setup(self):
        config = PipelineConfig()
        assert list(config.azimuth_schedule) == [45, -45, 90, -90, 135, -135, 180]
        assert config.alpha == 3.0 and config.beta == 3.0
        assert config.boundary_radius == 2
        assert config.image_size == (512, 512)
        assert config.guidance_scale == 15.0
        assert config.steps == 25
        assert config.fuse.lambda_l1 == 10.0
        assert config.fuse.lr == 0.1

    def test_zero_azimuth_rejected(self):
        with pytest.raises(ValueError, match="input view"):
            PipelineConfig(azimuth_schedule=(0, 45))

    def test_duplicate_azimuth_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            PipelineConfig(azimuth_schedule=(45, 45))

    def test_toml_roundtrip(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text(
            "[pipeline]\nimage_size = [64, 64]\nbase_seed = 9\n"
            "azimuth_schedule = [45.0, -45.0]\n\n"
            "[fuse]\niterations = 7\nresolution = [32, 32]\n")
        config = PipelineConfig.from_toml(path)
        assert config.image_size == (64, 64)
        assert config.base_seed == 9
        assert config.azimuth_schedule == (45.0, -45.0)
        assert config.fuse.iterations == 7
        assert config.fuse.resolution == (32, 32)

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("[pipeline]\nbananas = 1\n")
        with pytest.raises(ValueError, match="bananas"):
            PipelineConfig.from_toml(path)


class TestBackViewInit:
    def test_file_source(self, sphere_setup, tmp_path):
        mesh, _, gt = sphere_setup
        back_path = tmp_path / "back.png"
        imaging.save_png(back_path, gt[180.0])
        config = small_config(back_view_source=f"file:{back_path}")
        input_view = make_support_view(mesh, 0.0, gt[0.0], S128)
        view = initialize_back_view(mesh, input_view, config)
        assert view.camera.azimuth == 180.0
        assert psnr(view.image, gt[180.0]) > 45.0  # png quantization only
        assert view.visible_faces == visible_face_set(view.buffers)

    def test_oracle_backend_source(self, sphere_setup):
        mesh, _, gt = sphere_setup
        config = small_config(back_view_source="backend")
        input_view = make_support_view(mesh, 0.0, gt[0.0], S128)
        view = initialize_back_view(mesh, input_view, config, OracleBackend(gt))
        assert np.array_equal(view.image, gt[180.0])

    def test_source_none_raises(self, sphere_setup):
        mesh, _, gt = sphere_setup
        config = small_config(back_view_source="none")
        input_view = make_support_view(mesh, 0.0, gt[0.0], S128)
        with pytest.raises(BackViewUnavailable, match="unavailable"):
            initialize_back_view(mesh, input_view, config)

    def test_backend_down_raises_distinct_error(self, sphere_setup):
        mesh, _, gt = sphere_setup

        class DownBackend:
            backend_id = "down"

            def back_view(self, request):
                raise BackendUnreachable("connection refused")

            def inpaint(self, request):
                raise BackendUnreachable("connection refused")

        config = small_config(back_view_source="backend")
        input_view = make_support_view(mesh, 0.0, gt[0.0], S128)
        with pytest.raises(BackViewUnavailable, match="unavailable"):
            initialize_back_view(mesh, input_view, config, DownBackend())


class TestSynthesizeAllViews:
    def test_schedule_conformance(self, sphere_setup):
        mesh, _, gt = sphere_setup
        backend = RecordingBackend(OracleBackend(gt))
        config = small_config(skip_fully_known=False)
        result = synthesize_all_views(mesh, gt[0.0], config, backend)
        assert [az for az, _, _ in backend.inpaint_calls] == \
            [45, -45, 90, -90, 135, -135, 180]
        assert backend.backview_calls == [BACK_INIT_PROMPT]
        seeds = [s for _, _, s in backend.inpaint_calls]
        assert seeds == [config.base_seed + 1 + i for i in range(7)]

    def test_final_set_has_eight_views_with_180_replaced(self, sphere_setup):
        mesh, _, gt = sphere_setup
        result = synthesize_all_views(mesh, gt[0.0], small_config(),
                                      OracleBackend(gt))
        assert len(result.views) == 8
        assert result.views.provenance.count("input") == 1
        assert "back_init" not in result.views.provenance
        azimuths = result.views.azimuths()
        assert azimuths.count(180.0) == 1
        assert azimuths[0] == 0.0

    def test_oracle_views_match_ground_truth(self, sphere_setup):
        mesh, _, gt = sphere_setup
        result = synthesize_all_views(mesh, gt[0.0], small_config(),
                                      OracleBackend(gt))
        for view in result.views.views:
            assert psnr(view.image, gt[view.camera.azimuth]) >= 35.0

    def test_empty_schedule_with_file_back_view(self, sphere_setup, tmp_path):
        mesh, _, gt = sphere_setup
        back_path = tmp_path / "back.png"
        imaging.save_png(back_path, gt[180.0])
        config = small_config(azimuth_schedule=(),
                              back_view_source=f"file:{back_path}")

        class ExplodingBackend:
            backend_id = "explode"

            def inpaint(self, request):
                raise AssertionError("backend must not be called")

        result = synthesize_all_views(mesh, gt[0.0], config, ExplodingBackend())
        assert len(result.views) == 2
        assert result.views.provenance == ["input", "back_init"]
        assert result.request_log == []

    def test_diffuse_fill_solid_color(self):
        mesh = generate_test_mesh("uv_sphere", 12)
        solid = TextureMap.constant((16, 16), value=0.0)
        solid.texels[:] = (0.7, 0.35, 0.2)
        gt = ground_truth_views(mesh, solid, GRID, S128)
        config = small_config()
        result = synthesize_all_views(mesh, gt[0.0], config, DiffuseFillBackend())
        for view in result.views.views:
            inside = view.buffers.silhouette
            dev = np.abs(view.image[inside] - (0.7, 0.35, 0.2)).max()
            assert dev <= 2.0 / 255.0, view.camera.azimuth

    def test_monotone_coverage(self, sphere_setup):
        mesh, _, gt = sphere_setup
        result = synthesize_all_views(mesh, gt[0.0], small_config(),
                                      OracleBackend(gt))
        covered = set()
        sizes = []
        for view in result.views.views:
            covered |= view.visible_faces
            sizes.append(len(covered))
        assert sizes == sorted(sizes)

    def test_determinism_bit_identical(self, sphere_setup, tmp_path):
        mesh, _, gt = sphere_setup
        config = small_config()
        dirs = []
        for run in ("a", "b"):
            out = tmp_path / run
            result = synthesize_all_views(mesh, gt[0.0], config,
                                          OracleBackend(gt), out_dir=str(out))
            dirs.append(out)
        assert rundir_hash(str(dirs[0])) == rundir_hash(str(dirs[1]))

    def test_input_image_never_modified(self, sphere_setup):
        mesh, _, gt = sphere_setup
        original = gt[0.0].copy()
        result = synthesize_all_views(mesh, gt[0.0], small_config(),
                                      OracleBackend(gt))
        assert np.array_equal(gt[0.0], original)
        assert np.array_equal(result.views.views[0].image, original)

    def test_size_mismatch_rejected(self, sphere_setup):
        mesh, _, gt = sphere_setup
        with pytest.raises(ValueError, match="configured size"):
            synthesize_all_views(mesh, np.ones((64, 64, 3)), small_config(),
                                 OracleBackend(gt))

    def test_backend_failure_preserves_partial_run(self, sphere_setup, tmp_path):
        mesh, _, gt = sphere_setup

        class FailsAt90:
            backend_id = "flaky"

            def __init__(self):
                self.inner = OracleBackend(gt)

            def inpaint(self, request):
                if request.view_azimuth == 90.0:
                    raise BackendUnreachable("boom")
                return self.inner.inpaint(request)

            def back_view(self, request):
                return self.inner.back_view(request)

        out = tmp_path / "partial"
        config = small_config(skip_fully_known=False)
        with pytest.raises(BackendUnreachable):
            synthesize_all_views(mesh, gt[0.0], config, FailsAt90(),
                                 out_dir=str(out))
        assert (out / "view_+045" / "result.png").exists()
        assert (out / "view_-045" / "result.png").exists()
        assert (out / "view_+090" / "blend.png").exists()
        assert not (out / "view_+090" / "result.png").exists()

    def test_run_directory_layout(self, sphere_setup, tmp_path):
        mesh, _, gt = sphere_setup
        out = tmp_path / "run"
        config = small_config(debug_dumps=True)
        synthesize_all_views(mesh, gt[0.0], config, OracleBackend(gt),
                             out_dir=str(out))
        vdir = out / "view_+045"
        for name in ("blend.png", "known_mask.png", "normal.png",
                     "silhouette.png", "result.png", "meta.json"):
            assert (vdir / name).exists(), name
        import json
        meta = json.loads((vdir / "meta.json").read_text())
        assert set(meta) >= {"azimuth", "seed", "prompt", "backend_id", "timings"}
        assert (vdir / "debug").is_dir()
        assert any(f.suffix == ".f32" for f in (vdir / "debug").iterdir())
