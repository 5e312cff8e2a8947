import json
import os

import numpy as np
import pytest

from texfuse import cli
from texfuse.mockserver import MockServer
from texfuse.pipeline import rundir_hash


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture") / "sphere"
    rc = cli.main(["gen-mesh", "uv_sphere", "12", "stripes",
                   "--out", str(out), "--size", "128"])
    assert rc == 0
    return str(out)


SMALL_CONFIG = """\
[pipeline]
image_size = [128, 128]
base_seed = 11

[fuse]
iterations = 25
resolution = [64, 64]
"""


@pytest.fixture()
def config_path(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(SMALL_CONFIG)
    return str(p)


class TestGenMesh:
    def test_writes_expected_files(self, fixture_dir):
        names = set(os.listdir(fixture_dir))
        assert {"mesh.obj", "mesh.mtl", "texture_gt.png", "input.png",
                "manifest.json", "views"} <= names
        views = sorted(os.listdir(os.path.join(fixture_dir, "views")))
        assert len(views) == 8
        assert "view_+000.png" in views and "view_+180.png" in views

    def test_regeneration_bit_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            rc = cli.main(["gen-mesh", "cube", "2", "checker",
                           "--out", str(out), "--size", "64", "--seed", "4"])
            assert rc == 0
        assert rundir_hash(str(a)) == rundir_hash(str(b))

    def test_manifest_hashes(self, fixture_dir):
        manifest = json.load(open(os.path.join(fixture_dir, "manifest.json")))
        assert manifest["kind"] == "uv_sphere"
        assert len(manifest["hashes"]["mesh.obj"]) == 64


class TestSynthesize:
    def test_views_only_stops_before_fusion(self, fixture_dir, config_path, tmp_path):
        out = tmp_path / "runs"
        rc = cli.main(["synthesize", "--mesh", f"{fixture_dir}/mesh.obj",
                       "--input", f"{fixture_dir}/input.png",
                       "--config", config_path,
                       "--backend", f"oracle:{fixture_dir}",
                       "--out", str(out), "--views-only"])
        assert rc == 0
        run = out / os.listdir(out)[0]
        assert not (run / "fused").exists()
        manifest = json.load(open(run / "manifest.json"))
        assert manifest["views_only"] is True
        assert [e["azimuth"] for e in manifest["request_log"]] == \
            [45, -45, 90, -90, 135, -135, 180]

    def test_full_run_exports_textured_mesh(self, fixture_dir, config_path, tmp_path):
        out = tmp_path / "runs"
        rc = cli.main(["synthesize", "--mesh", f"{fixture_dir}/mesh.obj",
                       "--input", f"{fixture_dir}/input.png",
                       "--config", config_path,
                       "--backend", f"oracle:{fixture_dir}",
                       "--out", str(out)])
        assert rc == 0
        run = out / os.listdir(out)[0]
        for name in ("mesh.obj", "mesh.mtl", "mesh.png", "loss_trace.csv"):
            assert (run / "fused" / name).exists(), name

    def test_missing_config_is_usage_error(self, fixture_dir, tmp_path):
        with pytest.raises(SystemExit):
            cli.main(["synthesize", "--mesh", f"{fixture_dir}/mesh.obj",
                      "--input", f"{fixture_dir}/input.png",
                      "--config", str(tmp_path / "nope.toml"),
                      "--backend", f"oracle:{fixture_dir}",
                      "--out", str(tmp_path / "x")])

    def test_no_backend_is_usage_error(self, fixture_dir, tmp_path, monkeypatch):
        monkeypatch.delenv(cli.ENV_BACKEND_URL, raising=False)
        with pytest.raises(SystemExit):
            cli.main(["synthesize", "--mesh", f"{fixture_dir}/mesh.obj",
                      "--input", f"{fixture_dir}/input.png",
                      "--out", str(tmp_path / "x")])

    def test_env_var_backend(self, fixture_dir, config_path, tmp_path, monkeypatch):
        with MockServer(gt_dir=fixture_dir) as server:
            monkeypatch.setenv(cli.ENV_BACKEND_URL, server.url)
            out = tmp_path / "runs"
            rc = cli.main(["synthesize", "--mesh", f"{fixture_dir}/mesh.obj",
                           "--input", f"{fixture_dir}/input.png",
                           "--config", config_path,
                           "--out", str(out), "--views-only"])
            assert rc == 0

    def test_no_back_init_flag(self, fixture_dir, config_path, tmp_path):
        out = tmp_path / "runs"
        rc = cli.main(["synthesize", "--mesh", f"{fixture_dir}/mesh.obj",
                       "--input", f"{fixture_dir}/input.png",
                       "--config", config_path,
                       "--backend", f"oracle:{fixture_dir}",
                       "--out", str(out), "--views-only", "--no-back-init"])
        assert rc == 0
        run = out / os.listdir(out)[0]
        assert not (run / "back_init").exists()

    def test_rerun_reproduces_bit_exactly(self, fixture_dir, config_path, tmp_path):
        hashes = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            rc = cli.main(["synthesize", "--mesh", f"{fixture_dir}/mesh.obj",
                           "--input", f"{fixture_dir}/input.png",
                           "--config", config_path,
                           "--backend", f"oracle:{fixture_dir}",
                           "--out", str(out)])
            assert rc == 0
            run = out / os.listdir(out)[0]
            hashes.append(rundir_hash(str(run)))
        assert hashes[0] == hashes[1]


class TestEval:
    def test_self_eval_exit_zero(self, fixture_dir, tmp_path):
        report = tmp_path / "report.csv"
        rc = cli.main(["eval", "--mesh", f"{fixture_dir}/mesh.obj",
                       "--texture", f"{fixture_dir}/texture_gt.png",
                       "--gt", fixture_dir, "--size", "128",
                       "--n-views", "4", "--spacing", "90",
                       "--report", str(report), "--min-psnr", "90"])
        assert rc == 0
        lines = report.read_text().strip().splitlines()
        assert len(lines) == 6  # header + 4 views + mean

    def test_unreachable_threshold_exit_nonzero(self, fixture_dir):
        rc = cli.main(["eval", "--mesh", f"{fixture_dir}/mesh.obj",
                       "--texture", f"{fixture_dir}/texture_gt.png",
                       "--gt", fixture_dir, "--size", "128",
                       "--n-views", "2", "--spacing", "180",
                       "--min-psnr", "200"])
        assert rc != 0


class TestConformanceCommand:
    def test_against_mock(self, fixture_dir):
        with MockServer(gt_dir=fixture_dir) as server:
            rc = cli.main(["conformance", "--url", server.url])
        assert rc == 0
