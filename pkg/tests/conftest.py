import numpy as np
import pytest

from texfuse.aggregate import SupportView
from texfuse.meshes import TriangleMesh, generate_test_mesh
from texfuse.raster import (RenderSettings, make_turntable_camera, rasterize,
                            render_textured)


@pytest.fixture(scope="session")
def small_settings():
    return RenderSettings(image_size=(128, 128))


@pytest.fixture(scope="session")
def sphere16():
    return generate_test_mesh("uv_sphere", 16)


@pytest.fixture(scope="session")
def cube1():
    return generate_test_mesh("cube", 1)


def build_flat_cube() -> TriangleMesh:
    """Cube with per-face duplicated vertices: interpolated normals stay flat.

    Each face spans the full [0,1]^2 UV square; not watertight by design.
    """
    verts, faces, uvs = [], [], []
    axes = (
        ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
        ((0, 0, -1), (-1, 0, 0), (0, 1, 0)),
        ((1, 0, 0), (0, 0, -1), (0, 1, 0)),
        ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),
        ((0, 1, 0), (1, 0, 0), (0, 0, -1)),
        ((0, -1, 0), (1, 0, 0), (0, 0, 1)),
    )
    for normal, uax, vax in axes:
        n = np.array(normal, float)
        u = np.array(uax, float)
        v = np.array(vax, float)
        base = len(verts)
        for b in (-1.0, 1.0):
            for a in (-1.0, 1.0):
                verts.append(n + a * u + b * v)
        # corners: 0=(-1,-1) 1=(1,-1) 2=(-1,1) 3=(1,1)
        faces.append((base + 0, base + 1, base + 3))
        uvs.append(((0, 0), (1, 0), (1, 1)))
        faces.append((base + 0, base + 3, base + 2))
        uvs.append(((0, 0), (1, 1), (0, 1)))
    return TriangleMesh(np.array(verts), np.array(faces), np.array(uvs))


@pytest.fixture(scope="session")
def flat_cube():
    return build_flat_cube()


def ground_truth_views(mesh, texture, azimuths, settings):
    return {float(az): render_textured(mesh, texture, make_turntable_camera(az, settings))
            for az in azimuths}


def make_view(mesh, azimuth, image, settings) -> SupportView:
    camera = make_turntable_camera(azimuth, settings)
    return SupportView(camera=camera, image=np.asarray(image, float),
                       buffers=rasterize(mesh, camera))
