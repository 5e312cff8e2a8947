"""Weak-perspective turntable cameras and a deterministic software rasterizer.

Projection is orthographic along the rotated view axis with a uniform
pixels-per-world-unit scale; depth only resolves occlusion. Rasterization
samples top-left pixel centers, interpolates attributes barycentrically,
and breaks depth ties by lower face index so results are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .meshes import TriangleMesh, _normalize_rows

SENTINEL_EMPTY = -1


@dataclass(frozen=True)
class RenderSettings:
    image_size: tuple[int, int] = (512, 512)
    scale: float | None = None          # None: unit cube fills 90% of min dim
    elevation: float = 0.0
    principal_point: tuple[float, float] | None = None


@dataclass(frozen=True)
class Camera:
    """Turntable camera: azimuth about world +Y, orthographic projection.

    Azimuth 0 looks along (0, 0, -1); positive azimuth moves the camera
    toward world +X. Equal fields produce bit-identical projections.
    """

    azimuth: float
    elevation: float
    scale: float
    image_size: tuple[int, int]
    principal_point: tuple[float, float]

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are (right, up, toward-viewer)."""
        az = math.radians(self.azimuth)
        el = math.radians(self.elevation)
        eye = np.array([
            math.cos(el) * math.sin(az),
            math.sin(el),
            math.cos(el) * math.cos(az),
        ])
        right = np.cross([0.0, 1.0, 0.0], eye)
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise ValueError("camera elevation of +-90 degrees is unsupported")
        right = right / nr
        up = np.cross(eye, right)
        return np.stack([right, up, eye])

    def view_direction(self) -> np.ndarray:
        return -self.rotation()[2]

    def project(self, points: np.ndarray) -> np.ndarray:
        """(N, 3) world points -> (N, 3) of (x_px, y_px, depth).

        Depth is the coordinate along the view direction; smaller is nearer.
        Pixel y grows downward, so world up maps to smaller y.
        """
        r = self.rotation()
        cam = np.asarray(points, dtype=np.float64) @ r.T
        x = self.principal_point[0] + self.scale * cam[..., 0]
        y = self.principal_point[1] - self.scale * cam[..., 1]
        depth = -cam[..., 2]
        return np.stack([x, y, depth], axis=-1)


def make_turntable_camera(azimuth: float, settings: RenderSettings = RenderSettings()) -> Camera:
    w, h = settings.image_size
    if w <= 0 or h <= 0:
        raise ValueError("image_size must be positive")
    scale = settings.scale
    if scale is None:
        scale = 0.45 * min(w, h)
    principal = settings.principal_point
    if principal is None:
        principal = (w / 2.0, h / 2.0)
    return Camera(azimuth=float(azimuth), elevation=float(settings.elevation),
                  scale=float(scale), image_size=(int(w), int(h)),
                  principal_point=(float(principal[0]), float(principal[1])))


@dataclass
class ViewBuffers:
    """Per-view rasterization products.

    face_id uses SENTINEL_EMPTY for uncovered pixels; silhouette is exactly
    face_id != SENTINEL_EMPTY. Depth at covered pixels equals the view-axis
    coordinate of world_pos.
    """

    face_id: np.ndarray       # (H, W) int32
    depth: np.ndarray         # (H, W) float64, +inf where empty
    world_pos: np.ndarray     # (H, W, 3)
    world_normal: np.ndarray  # (H, W, 3) unit where covered
    uv: np.ndarray            # (H, W, 2)
    silhouette: np.ndarray    # (H, W) bool

    @property
    def image_size(self) -> tuple[int, int]:
        h, w = self.face_id.shape
        return (w, h)


def rasterize(mesh: TriangleMesh, camera: Camera) -> ViewBuffers:
    """Z-buffered rasterization with barycentric attribute interpolation.

    Back-face culling is off; the depth test alone resolves visibility.
    Pixels exactly on shared edges go to the nearer face, ties to the lower
    face index.
    """
    w, h = camera.image_size
    face_id = np.full((h, w), SENTINEL_EMPTY, dtype=np.int32)
    depth = np.full((h, w), np.inf, dtype=np.float64)
    world_pos = np.zeros((h, w, 3), dtype=np.float64)
    world_normal = np.zeros((h, w, 3), dtype=np.float64)
    uv = np.zeros((h, w, 2), dtype=np.float64)

    if mesh.num_faces:
        proj = camera.project(mesh.vertices)
        xy = proj[:, :2]
        z = proj[:, 2]
        for fi in range(mesh.num_faces):
            ia, ib, ic = mesh.faces[fi]
            pa, pb, pc = xy[ia], xy[ib], xy[ic]
            denom = (pb[1] - pc[1]) * (pa[0] - pc[0]) + (pc[0] - pb[0]) * (pa[1] - pc[1])
            if denom == 0.0:
                continue
            x0 = max(int(math.floor(min(pa[0], pb[0], pc[0]) - 0.5)), 0)
            x1 = min(int(math.ceil(max(pa[0], pb[0], pc[0]) - 0.5)), w - 1)
            y0 = max(int(math.floor(min(pa[1], pb[1], pc[1]) - 0.5)), 0)
            y1 = min(int(math.ceil(max(pa[1], pb[1], pc[1]) - 0.5)), h - 1)
            if x1 < x0 or y1 < y0:
                continue
            px = np.arange(x0, x1 + 1) + 0.5
            py = np.arange(y0, y1 + 1) + 0.5
            gx, gy = np.meshgrid(px, py)
            b0 = ((pb[1] - pc[1]) * (gx - pc[0]) + (pc[0] - pb[0]) * (gy - pc[1])) / denom
            b1 = ((pc[1] - pa[1]) * (gx - pc[0]) + (pa[0] - pc[0]) * (gy - pc[1])) / denom
            b2 = 1.0 - b0 - b1
            inside = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0)
            if not inside.any():
                continue
            d = b0 * z[ia] + b1 * z[ib] + b2 * z[ic]
            win = depth[y0:y1 + 1, x0:x1 + 1]
            update = inside & (d < win)
            if not update.any():
                continue
            win[update] = d[update]
            face_id[y0:y1 + 1, x0:x1 + 1][update] = fi
            bsel = np.stack([b0[update], b1[update], b2[update]], axis=-1)
            tri = mesh.vertices[[ia, ib, ic]]
            world_pos[y0:y1 + 1, x0:x1 + 1][update] = bsel @ tri
            nrm = bsel @ mesh.vertex_normals[[ia, ib, ic]]
            world_normal[y0:y1 + 1, x0:x1 + 1][update] = _normalize_rows(nrm)
            uv[y0:y1 + 1, x0:x1 + 1][update] = bsel @ mesh.corner_uvs[fi]

    silhouette = face_id != SENTINEL_EMPTY
    return ViewBuffers(face_id=face_id, depth=depth, world_pos=world_pos,
                       world_normal=world_normal, uv=uv, silhouette=silhouette)


def visible_face_set(buffers: ViewBuffers) -> set[int]:
    """Distinct non-sentinel face ids present in the buffer."""
    ids = np.unique(buffers.face_id)
    return set(int(i) for i in ids if i != SENTINEL_EMPTY)


def render_normal_map(buffers: ViewBuffers, camera: Camera) -> np.ndarray:
    """8-bit RGB camera-space normals; background is mid-gray (128,128,128)."""
    h, w = buffers.face_id.shape
    out = np.full((h, w, 3), 128, dtype=np.uint8)
    mask = buffers.silhouette
    if mask.any():
        n_cam = buffers.world_normal[mask] @ camera.rotation().T
        out[mask] = np.round(255.0 * (np.clip(n_cam, -1.0, 1.0) + 1.0) / 2.0).astype(np.uint8)
    return out


def render_silhouette(buffers: ViewBuffers) -> np.ndarray:
    """8-bit grayscale: 255 where covered, 0 elsewhere."""
    return np.where(buffers.silhouette, 255, 0).astype(np.uint8)


def bilinear_coefficients(u: np.ndarray, v: np.ndarray, width: int, height: int):
    """Clamp-to-edge bilinear footprint for samples at (u, v) in [0, 1]^2.

    Returns (idx, wts): (N, 4) flat texel indices into a row-major
    (height, width) grid and their weights. Row j is centered at
    v = (j + 0.5) / height, i.e. v grows with row index.
    """
    fu = np.asarray(u, dtype=np.float64) * width - 0.5
    fv = np.asarray(v, dtype=np.float64) * height - 0.5
    i0 = np.floor(fu)
    j0 = np.floor(fv)
    a = fu - i0
    b = fv - j0
    i0c = np.clip(i0, 0, width - 1).astype(np.int64)
    i1c = np.clip(i0 + 1, 0, width - 1).astype(np.int64)
    j0c = np.clip(j0, 0, height - 1).astype(np.int64)
    j1c = np.clip(j0 + 1, 0, height - 1).astype(np.int64)
    idx = np.stack([j0c * width + i0c, j0c * width + i1c,
                    j1c * width + i0c, j1c * width + i1c], axis=-1)
    wts = np.stack([(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b], axis=-1)
    return idx, wts


def sample_texture(texels: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear texture lookup with clamp-to-edge addressing."""
    th, tw = texels.shape[:2]
    idx, wts = bilinear_coefficients(u, v, tw, th)
    flat = texels.reshape(th * tw, -1)
    return np.einsum("nk,nkc->nc", wts, flat[idx])


def sample_image_bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear image lookup at continuous pixel coords (centers at +0.5)."""
    h, w = img.shape[:2]
    u = (np.asarray(x, dtype=np.float64)) / w
    v = (np.asarray(y, dtype=np.float64)) / h
    flat_img = img.reshape(h * w, -1) if img.ndim == 3 else img.reshape(h * w, 1)
    idx, wts = bilinear_coefficients(u, v, w, h)
    out = np.einsum("nk,nkc->nc", wts, flat_img[idx])
    return out if img.ndim == 3 else out[:, 0]


def sample_image_bilinear_masked(img: np.ndarray, mask: np.ndarray,
                                 x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear lookup that ignores taps outside ``mask``.

    Tap weights are renormalized over covered pixels, so colors outside the
    mask (e.g. the render background) never bleed into the sample; samples
    with no covered tap fall back to the plain bilinear value.
    """
    h, w = img.shape[:2]
    idx, wts = bilinear_coefficients(np.asarray(x, np.float64) / w,
                                     np.asarray(y, np.float64) / h, w, h)
    valid = np.asarray(mask).reshape(-1).astype(np.float64)
    masked = wts * valid[idx]
    total = masked.sum(axis=1)
    ok = total > 1e-12
    weights = np.where(ok[:, None], masked / np.where(ok, total, 1.0)[:, None], wts)
    flat = img.reshape(h * w, -1) if img.ndim == 3 else img.reshape(h * w, 1)
    out = np.einsum("nk,nkc->nc", weights, flat[idx])
    return out if img.ndim == 3 else out[:, 0]


def _texels_of(texture) -> np.ndarray:
    return np.asarray(getattr(texture, "texels", texture), dtype=np.float64)


def render_textured_from_buffers(buffers: ViewBuffers, texture) -> np.ndarray:
    """Textured render over precomputed buffers; background is white."""
    texels = _texels_of(texture)
    h, w = buffers.face_id.shape
    out = np.ones((h, w, 3), dtype=np.float64)
    mask = buffers.silhouette
    if mask.any():
        uvs = buffers.uv[mask]
        out[mask] = sample_texture(texels, uvs[:, 0], uvs[:, 1])
    return out


def render_textured(mesh: TriangleMesh, texture, camera: Camera) -> np.ndarray:
    """Render the mesh with a UV texture map (white background)."""
    return render_textured_from_buffers(rasterize(mesh, camera), texture)


def render_depth_16bit(buffers: ViewBuffers) -> np.ndarray:
    """Depth as 16-bit grayscale, near = high; background = 0."""
    out = np.zeros(buffers.depth.shape, dtype=np.uint16)
    mask = buffers.silhouette
    if mask.any():
        d = buffers.depth[mask]
        lo, hi = float(d.min()), float(d.max())
        span = hi - lo if hi > lo else 1.0
        out[mask] = np.round((hi - d) / span * 65535.0).astype(np.uint16)
    return out
