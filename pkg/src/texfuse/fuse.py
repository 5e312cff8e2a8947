"""UV texture optimization by inverse rendering.

The texture is fit to all accepted views at once: each iteration renders the
current texture in every view, scores an L1 term plus a multi-scale pyramid
term robust to small misalignment, and scatters the analytic gradient back
into the texels through the bilinear sampling footprint. The optimizer is a
self-contained bias-corrected Adam with post-step clamping to [0, 1].
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import imaging
from .aggregate import distance_transform
from .meshes import TriangleMesh, save_obj
from .raster import (Camera, ViewBuffers, bilinear_coefficients, rasterize,
                     sample_image_bilinear, sample_image_bilinear_masked)

_BLUR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass
class TextureMap:
    """RGB texture addressed by UV; texels[j, i] sits at v=(j+.5)/H, u=(i+.5)/W."""

    texels: np.ndarray  # (H, W, 3) float64 in [0, 1]

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.texels.shape[:2]
        return (w, h)

    @classmethod
    def constant(cls, resolution: tuple[int, int], value=0.5) -> "TextureMap":
        w, h = resolution
        texels = np.empty((h, w, 3), dtype=np.float64)
        texels[:] = value
        return cls(texels=texels)

    def save_png(self, path) -> None:
        # PNG rows run top-down while texel rows run v-up
        imaging.save_png(path, self.texels[::-1])

    @classmethod
    def load_png(cls, path) -> "TextureMap":
        return cls(texels=imaging.load_png(path)[::-1].copy())


@dataclass
class OptState:
    """Adam accumulators; shapes mirror the parameter array."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, shape, lr: float = 0.1, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "OptState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), step=0,
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(values: np.ndarray, gradient: np.ndarray, state: OptState):
    """One bias-corrected Adam update; result clamped to [0, 1]."""
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * gradient
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * gradient ** 2
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    out = values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return np.clip(out, 0.0, 1.0), state


def l1_loss(a: np.ndarray, b: np.ndarray, mask: np.ndarray):
    """Masked mean absolute difference and its gradient w.r.t. ``a``."""
    m = np.asarray(mask, dtype=bool)
    count = int(m.sum()) * a.shape[-1] if a.ndim == 3 else int(m.sum())
    grad = np.zeros_like(a)
    if count == 0:
        return 0.0, grad
    diff = a - b
    if a.ndim == 3:
        sel = diff[m]
        loss = float(np.abs(sel).sum()) / count
        grad[m] = np.sign(sel) / count
    else:
        loss = float(np.abs(diff[m]).sum()) / count
        grad[m] = np.sign(diff[m]) / count
    return loss, grad


def _blur(img: np.ndarray) -> np.ndarray:
    # zero padding keeps the operator self-adjoint, so the backward pass is
    # the same blur; channels filter separately on contiguous planes
    def blur2d(plane):
        out = ndimage.convolve1d(plane, _BLUR_KERNEL, axis=0, mode="constant", cval=0.0)
        return ndimage.convolve1d(out, _BLUR_KERNEL, axis=1, mode="constant", cval=0.0)

    if img.ndim == 2:
        return blur2d(img)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = blur2d(np.ascontiguousarray(img[:, :, c]))
    return out


def _down2(img: np.ndarray) -> np.ndarray:
    return img[::2, ::2]


def _up2_zeros(g: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=g.dtype)
    out[::2, ::2] = g
    return out


def effective_levels(shape, levels: int) -> int:
    limit = int(np.floor(np.log2(max(1, min(shape[0], shape[1])))))
    return max(1, min(levels, limit))


def build_mask_pyramid(mask: np.ndarray, levels: int) -> list[np.ndarray]:
    """Boolean masks for each scored pyramid level (level 1..levels)."""
    cur = np.asarray(mask, dtype=np.float64)
    out = []
    for _ in range(levels):
        cur = _down2(_blur(cur))
        out.append(cur >= 0.5)
    return out


def image_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    cur = np.asarray(img, dtype=np.float64)
    out = []
    for _ in range(levels):
        cur = _down2(_blur(cur))
        out.append(cur)
    return out


def perceptual_proxy_loss(a: np.ndarray, b: np.ndarray, mask: np.ndarray,
                          levels: int = 4, blur: bool = True,
                          b_pyramid: list[np.ndarray] | None = None,
                          mask_pyramid: list[np.ndarray] | None = None):
    """Pyramid L1: masked L1 over blurred, 2x-downsampled copies of a and b.

    Each of the ``levels`` scored levels is weighted 1/levels; gradients flow
    back through the blur/downsample transposes. Levels shrink automatically
    when the image is too small. ``b_pyramid``/``mask_pyramid`` accept
    precomputed constants for the common optimize-against-fixed-target loop.
    """
    levels = effective_levels(a.shape, levels)

    def reduce_once(img):
        return _down2(_blur(img)) if blur else _down2(img)

    a_levels = []
    cur = np.asarray(a, dtype=np.float64)
    for _ in range(levels):
        cur = reduce_once(cur)
        a_levels.append(cur)
    if b_pyramid is None:
        b_pyramid = []
        cur = np.asarray(b, dtype=np.float64)
        for _ in range(levels):
            cur = reduce_once(cur)
            b_pyramid.append(cur)
    if mask_pyramid is None:
        cur = np.asarray(mask, dtype=np.float64)
        mask_pyramid = []
        for _ in range(levels):
            cur = reduce_once(cur)
            mask_pyramid.append(cur >= 0.5)

    total = 0.0
    level_grads = []
    for al, bl, ml in zip(a_levels, b_pyramid, mask_pyramid):
        loss, grad = l1_loss(al, bl, ml)
        total += loss / levels
        level_grads.append(grad / levels)

    # walk back to full resolution, folding in each level's local gradient
    shapes = [np.asarray(a).shape] + [al.shape for al in a_levels]
    g = level_grads[-1]
    for lvl in range(levels - 1, 0, -1):
        up = _up2_zeros(g, shapes[lvl])
        g = (_blur(up) if blur else up) + level_grads[lvl - 1]
    up = _up2_zeros(g, shapes[0])
    g0 = _blur(up) if blur else up
    return total, g0


@dataclass
class ViewSampling:
    """Precomputed bilinear footprint of one view into the texture."""

    mask: np.ndarray     # (H, W) bool, covered pixels
    idx: np.ndarray      # (N, 4) flat texel indices
    wts: np.ndarray      # (N, 4) bilinear weights


def build_view_sampling(buffers: ViewBuffers, resolution: tuple[int, int]) -> ViewSampling:
    w, h = resolution
    mask = buffers.silhouette
    uvs = buffers.uv[mask]
    idx, wts = bilinear_coefficients(uvs[:, 0], uvs[:, 1], w, h)
    return ViewSampling(mask=mask, idx=idx, wts=wts)


def forward_render(texels: np.ndarray, sampling: ViewSampling) -> np.ndarray:
    h, w = sampling.mask.shape
    out = np.ones((h, w, 3), dtype=np.float64)
    flat = texels.reshape(-1, 3)
    out[sampling.mask] = np.einsum("nk,nkc->nc", sampling.wts, flat[sampling.idx])
    return out


def scatter_gradient(pixel_grad: np.ndarray, sampling: ViewSampling,
                     resolution: tuple[int, int]) -> np.ndarray:
    """Transpose of forward_render: deposit per-pixel gradients into texels."""
    w, h = resolution
    grad = np.zeros((h * w, 3), dtype=np.float64)
    g = pixel_grad[sampling.mask]                       # (N, 3)
    contrib = sampling.wts[:, :, None] * g[:, None, :]  # (N, 4, 3)
    flat_idx = sampling.idx.ravel()
    for c in range(3):
        grad[:, c] = np.bincount(flat_idx, weights=contrib[:, :, c].ravel(),
                                 minlength=h * w)
    return grad.reshape(h, w, 3)


def render_with_gradient(mesh: TriangleMesh, texture, camera: Camera,
                         upstream_gradient: np.ndarray):
    """Textured render plus the texture gradient for a given upstream gradient.

    The backward pass scatters each covered pixel's upstream gradient into
    its four bilinear source texels; uncovered pixels contribute nothing.
    """
    texels = np.asarray(getattr(texture, "texels", texture), dtype=np.float64)
    h, w = texels.shape[:2]
    sampling = build_view_sampling(rasterize(mesh, camera), (w, h))
    image = forward_render(texels, sampling)
    grad = scatter_gradient(np.asarray(upstream_gradient, dtype=np.float64),
                            sampling, (w, h))
    return image, grad


@dataclass
class FuseConfig:
    iterations: int = 400
    lambda_l1: float = 10.0
    lr: float = 0.1
    resolution: tuple[int, int] = (1024, 1024)
    proxy_levels: int = 4
    init: str = "bake"             # bake | gray
    checkpoint_every: int = 0      # texture PNG every K iterations, 0 = off
    checkpoint_dir: str | None = None
    trace_path: str | None = None  # loss trace CSV


def _views_list(views):
    return list(getattr(views, "views", views))


def optimize_texture(mesh: TriangleMesh, views, config: FuseConfig = FuseConfig()):
    """Fit a UV texture to all views; returns (TextureMap, loss trace rows).

    Per iteration and view the objective is pyramid-L1 + lambda * L1, masked
    to the view silhouette; gradients from all views accumulate into one Adam
    step. Raises if the texture goes non-finite.
    """
    view_list = _views_list(views)
    if not view_list:
        raise ValueError("no views to fuse")
    w, h = config.resolution

    if config.init == "bake":
        texture = bake_initial_texture(mesh, view_list, resolution=config.resolution)
    elif config.init == "gray":
        texture = TextureMap.constant(config.resolution)
    else:
        raise ValueError(f"unknown texture init: {config.init!r}")
    texels = texture.texels

    samplings, targets, b_pyrs, m_pyrs, masks = [], [], [], [], []
    for view in view_list:
        sampling = build_view_sampling(view.buffers, (w, h))
        mask = sampling.mask
        levels = effective_levels(mask.shape, config.proxy_levels)
        target = np.asarray(view.image, dtype=np.float64)
        samplings.append(sampling)
        targets.append(target)
        masks.append(mask)
        b_pyrs.append(image_pyramid(target, levels))
        m_pyrs.append(build_mask_pyramid(mask, levels))

    trace = []
    state = OptState.fresh(texels.shape, lr=config.lr)
    for it in range(config.iterations):
        grad = np.zeros_like(texels)
        per_view = []
        for sampling, target, mask, b_pyr, m_pyr in zip(
                samplings, targets, masks, b_pyrs, m_pyrs):
            rendered = forward_render(texels, sampling)
            l1, g_l1 = l1_loss(rendered, target, mask)
            prox, g_prox = perceptual_proxy_loss(
                rendered, target, mask, levels=config.proxy_levels,
                b_pyramid=b_pyr, mask_pyramid=m_pyr)
            per_view.append(prox + config.lambda_l1 * l1)
            grad += scatter_gradient(g_prox + config.lambda_l1 * g_l1,
                                     sampling, (w, h))
        total = float(sum(per_view))
        trace.append({"iteration": it, "per_view": per_view, "total": total})
        texels, state = adam_step(texels, grad, state)
        if not np.isfinite(texels).all():
            raise FloatingPointError(
                f"texture went non-finite at iteration {it} (total loss {total})")
        if (config.checkpoint_every and config.checkpoint_dir
                and (it + 1) % config.checkpoint_every == 0):
            TextureMap(texels).save_png(
                os.path.join(config.checkpoint_dir, f"texture_{it + 1:05d}.png"))

    if config.trace_path:
        write_loss_trace(config.trace_path, trace)
    return TextureMap(texels=texels), trace


def write_loss_trace(path, trace) -> None:
    import csv
    if not trace:
        return
    n_views = len(trace[0]["per_view"])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration"] + [f"view_{i}" for i in range(n_views)] + ["total"])
        for row in trace:
            writer.writerow([row["iteration"]] + [f"{v:.8g}" for v in row["per_view"]]
                            + [f"{row['total']:.8g}"])


# ---------------------------------------------------------------------------
# Texture-space baking
# ---------------------------------------------------------------------------

def rasterize_uv_atlas(mesh: TriangleMesh, resolution: tuple[int, int]):
    """Map texels to surface points via the UV charts.

    Returns (face_id, world_pos, world_normal) per texel; face_id -1 where no
    chart covers the texel.
    """
    w, h = resolution
    face_id = np.full((h, w), -1, dtype=np.int32)
    world_pos = np.zeros((h, w, 3), dtype=np.float64)
    world_normal = np.zeros((h, w, 3), dtype=np.float64)
    for fi in range(mesh.num_faces):
        uv = mesh.corner_uvs[fi]
        # texel-space corners: texel (i, j) center sits at uv*(w,h) - 0.5
        pa = uv[0] * (w, h) - 0.5
        pb = uv[1] * (w, h) - 0.5
        pc = uv[2] * (w, h) - 0.5
        denom = (pb[1] - pc[1]) * (pa[0] - pc[0]) + (pc[0] - pb[0]) * (pa[1] - pc[1])
        if denom == 0.0:
            continue
        x0 = max(int(np.floor(min(pa[0], pb[0], pc[0]))), 0)
        x1 = min(int(np.ceil(max(pa[0], pb[0], pc[0]))), w - 1)
        y0 = max(int(np.floor(min(pa[1], pb[1], pc[1]))), 0)
        y1 = min(int(np.ceil(max(pa[1], pb[1], pc[1]))), h - 1)
        if x1 < x0 or y1 < y0:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64),
                             np.arange(y0, y1 + 1, dtype=np.float64))
        b0 = ((pb[1] - pc[1]) * (gx - pc[0]) + (pc[0] - pb[0]) * (gy - pc[1])) / denom
        b1 = ((pc[1] - pa[1]) * (gx - pc[0]) + (pa[0] - pc[0]) * (gy - pc[1])) / denom
        b2 = 1.0 - b0 - b1
        inside = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0)
        if not inside.any():
            continue
        ia, ib, ic = mesh.faces[fi]
        bsel = np.stack([b0[inside], b1[inside], b2[inside]], axis=-1)
        face_id[y0:y1 + 1, x0:x1 + 1][inside] = fi
        world_pos[y0:y1 + 1, x0:x1 + 1][inside] = bsel @ mesh.vertices[[ia, ib, ic]]
        nrm = bsel @ mesh.vertex_normals[[ia, ib, ic]]
        norms = np.linalg.norm(nrm, axis=-1, keepdims=True)
        world_normal[y0:y1 + 1, x0:x1 + 1][inside] = \
            np.divide(nrm, norms, out=nrm.copy(), where=norms > 0)
    return face_id, world_pos, world_normal


def bake_initial_texture(mesh: TriangleMesh, views,
                         resolution: tuple[int, int] = (1024, 1024),
                         alpha: float = 3.0, beta: float = 3.0) -> TextureMap:
    """Seed texture from reprojected view colors.

    Per covered texel each view contributes when the texel's face is in the
    view's visible set and the surface point projects in bounds; weights use
    the grazing angle to the view axis and the view-space distance transform
    of the silhouette, mirroring the view-blending weights. Unobserved texels
    stay mid-gray.
    """
    texels, _ = _bake(mesh, views, resolution, alpha, beta)
    return TextureMap(texels=texels)


def observed_texel_mask(mesh: TriangleMesh, views,
                        resolution: tuple[int, int]) -> np.ndarray:
    """Boolean mask of texels whose surface point at least one view sees."""
    _, observed = _bake(mesh, views, resolution)
    return observed


def _bake(mesh: TriangleMesh, views, resolution: tuple[int, int],
          alpha: float = 3.0, beta: float = 3.0):
    view_list = _views_list(views)
    w, h = resolution
    texels = np.full((h, w, 3), 0.5, dtype=np.float64)
    observed = np.zeros((h, w), dtype=bool)
    if not view_list:
        return texels, observed
    face_id, world_pos, world_normal = rasterize_uv_atlas(mesh, resolution)
    covered = face_id >= 0
    if not covered.any():
        return texels, observed

    pts = world_pos[covered]
    nrm = world_normal[covered]
    fids = face_id[covered]
    max_face = int(fids.max())
    acc_color = np.zeros((len(pts), 3), dtype=np.float64)
    acc_weight = np.zeros(len(pts), dtype=np.float64)

    for view in view_list:
        lut = np.zeros(max_face + 2, dtype=bool)
        if view.visible_faces:
            vis = np.fromiter(view.visible_faces, dtype=np.int64)
            lut[vis[vis <= max_face]] = True
        seen = lut[fids]
        if not seen.any():
            continue
        proj = view.camera.project(pts[seen])
        vw, vh = view.camera.image_size
        inside = (proj[:, 0] >= 0.0) & (proj[:, 0] <= vw) & \
                 (proj[:, 1] >= 0.0) & (proj[:, 1] <= vh)
        sel = np.where(seen)[0][inside]
        if len(sel) == 0:
            continue
        proj = proj[inside]
        toward = view.camera.rotation()[2]
        cosang = np.clip(nrm[sel] @ toward, -1.0, 1.0)
        phi = np.arccos(cosang)
        edt = distance_transform(view.buffers.silhouette)
        d = np.maximum(sample_image_bilinear(edt, proj[:, 0], proj[:, 1]), 0.0)
        weight = np.exp(-alpha * phi) * np.power(d, beta)
        color = sample_image_bilinear_masked(view.image, view.buffers.silhouette,
                                             proj[:, 0], proj[:, 1])
        acc_color[sel] += color * weight[:, None]
        acc_weight[sel] += weight

    good = acc_weight > 1e-12
    baked = np.full((len(pts), 3), 0.5, dtype=np.float64)
    baked[good] = acc_color[good] / acc_weight[good][:, None]
    texels[covered] = baked
    seen = np.zeros((h, w), dtype=bool)
    seen[covered] = good
    return texels, seen


def export_textured_mesh(mesh: TriangleMesh, texture: TextureMap, path) -> None:
    """Write OBJ + MTL + PNG so a reload renders identically (8-bit quantized)."""
    path = os.fspath(path)
    stem = os.path.splitext(path)[0]
    texture_name = os.path.basename(stem) + ".png"
    save_obj(mesh, path, mtl_name="material0", texture_filename=texture_name)
    texture.save_png(stem + ".png")
