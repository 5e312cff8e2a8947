"""Importance-weighted aggregation of known views into a target view.

For every support view we compute, on the target pixel grid: a cross-view
visibility mask (shared visible faces + in-bounds reprojection), a distance
transform to the nearest invisible pixel, the angular difference between the
surface normal expressed in the support camera frame versus the target
camera frame, and a boundary-exclusion mask for pixels only one view covers.
Those feed the blending weights that combine reprojected colors into one
image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .meshes import TriangleMesh
from .raster import (Camera, ViewBuffers, rasterize,
                     sample_image_bilinear_masked, visible_face_set)

EPS_ANGLE = 1e-8     # guards the normalization in the angular difference
EPS_WEIGHT = 1e-8    # added to the blending denominator
MIN_WEIGHT_SUM = 1e-6  # below this the pixel is reclassified as unknown


@dataclass
class SupportView:
    """A known view: camera, accepted image, and its rasterization."""

    camera: Camera
    image: np.ndarray
    buffers: ViewBuffers
    visible_faces: set[int] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.visible_faces is None:
            self.visible_faces = visible_face_set(self.buffers)
        ih, iw = self.image.shape[:2]
        bw, bh = self.buffers.image_size
        if (iw, ih) != (bw, bh):
            raise ValueError("support view image size does not match buffers")


@dataclass
class BlendResult:
    """Blended target image and the mask of pixels whose color is known."""

    blended: np.ndarray             # (H, W, 3), white where unknown
    known_mask: np.ndarray          # (H, W) bool
    per_view_weights: np.ndarray | None = None   # (V, H, W) diagnostics
    per_view_visibility: np.ndarray | None = None
    per_view_angle: np.ndarray | None = None
    per_view_distance: np.ndarray | None = None


@dataclass(frozen=True)
class AggregationParams:
    alpha: float = 3.0     # strength of the angular difference
    beta: float = 3.0      # strength of the boundary distance
    boundary_radius: int = 2


def cross_view_visibility(support: SupportView, target_buffers: ViewBuffers) -> np.ndarray:
    """Mask of target pixels whose surface point the support view also sees.

    A pixel qualifies when its face id is in the support view's visible set
    and its world position projects inside the support image rectangle.
    """
    h, w = target_buffers.face_id.shape
    out = np.zeros((h, w), dtype=bool)
    mask = target_buffers.silhouette
    if not mask.any():
        return out
    max_face = int(target_buffers.face_id.max())
    lut = np.zeros(max_face + 2, dtype=bool)
    if support.visible_faces:
        vis = np.fromiter(support.visible_faces, dtype=np.int64)
        lut[vis[vis <= max_face]] = True
    shared = np.zeros((h, w), dtype=bool)
    shared[mask] = lut[target_buffers.face_id[mask]]
    if not shared.any():
        return out
    pts = target_buffers.world_pos[shared]
    proj = support.camera.project(pts)
    sw, sh = support.camera.image_size
    inside = (proj[:, 0] >= 0.0) & (proj[:, 0] <= sw) & \
             (proj[:, 1] >= 0.0) & (proj[:, 1] <= sh)
    out[shared] = inside
    return out


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each mask=1 pixel to the nearest 0 pixel.

    Pixels with mask=0 get 0. A mask with no zero pixels measures against a
    virtual zero ring just outside the image (nearest border distance + 1).
    """
    m = np.asarray(mask).astype(bool)
    if m.all():
        h, w = m.shape
        rows = np.minimum(np.arange(h), np.arange(h)[::-1])[:, None]
        cols = np.minimum(np.arange(w), np.arange(w)[::-1])[None, :]
        return np.minimum(rows, cols).astype(np.float64) + 1.0
    return ndimage.distance_transform_edt(m)


def angular_difference(support: SupportView, target_buffers: ViewBuffers,
                       target_camera: Camera, visibility: np.ndarray) -> np.ndarray:
    """Angle between the surface normal seen in the two camera frames.

    The same world normal is rotated into the support and the target camera
    frames; the angle between the two rotated vectors vanishes when the
    cameras coincide and for normals parallel to the turntable axis.
    """
    phi = np.zeros(visibility.shape, dtype=np.float64)
    if not visibility.any():
        return phi
    n_world = target_buffers.world_normal[visibility]
    n_sup = n_world @ support.camera.rotation().T
    n_tgt = n_world @ target_camera.rotation().T
    dots = np.einsum("ij,ij->i", n_sup, n_tgt)
    norms = np.linalg.norm(n_sup, axis=1) * np.linalg.norm(n_tgt, axis=1)
    cosang = np.clip(dots / np.maximum(norms, EPS_ANGLE), -1.0, 1.0)
    phi[visibility] = np.arccos(cosang)
    return phi


def boundary_exclusion(all_masks: list[np.ndarray], radius: int = 2) -> list[np.ndarray]:
    """Drop pixels near a view's visibility boundary when no other view covers them.

    B_v is 0 exactly where the pixel lies within ``radius`` of the
    visible/invisible boundary of that view's mask and the total coverage
    count over all views is 1; everywhere else B_v = 1.
    """
    if not all_masks:
        return []
    coverage = np.zeros(all_masks[0].shape, dtype=np.int64)
    for m in all_masks:
        coverage += np.asarray(m).astype(np.int64)
    solo = coverage == 1
    out = []
    for m in all_masks:
        m = np.asarray(m).astype(bool)
        near_edge = m & (distance_transform(m) <= radius)
        out.append(~(near_edge & solo))
    return out


def blend_weights(visibilities, exclusions, angles, distances,
                  alpha: float = 3.0, beta: float = 3.0) -> np.ndarray:
    """Normalized per-view blending weights.

    w_v = M_v B_v exp(-alpha * phi_v) d_v^beta, normalized across views with
    a small epsilon in the denominator. Pixels whose raw weight sum falls
    below MIN_WEIGHT_SUM get all-zero weights so callers treat them as
    unknown rather than dividing into noise.
    """
    terms = []
    for m, b, phi, d in zip(visibilities, exclusions, angles, distances):
        m = np.asarray(m, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        terms.append(m * b * np.exp(-alpha * np.asarray(phi, dtype=np.float64))
                     * np.power(np.asarray(d, dtype=np.float64), beta))
    stack = np.stack(terms)
    total = stack.sum(axis=0)
    weights = stack / (total + EPS_WEIGHT)
    weights[:, total < MIN_WEIGHT_SUM] = 0.0
    return weights


def reproject_color(support: SupportView, target_buffers: ViewBuffers,
                    pixels: np.ndarray) -> np.ndarray:
    """Bilinear color lookup of target surface points in the support image.

    Bilinear taps are weighted by the support silhouette so the background
    color never bleeds into surface samples near the support view's limb;
    interior samples (all four taps covered) are plain bilinear.
    """
    pts = target_buffers.world_pos[pixels]
    proj = support.camera.project(pts)
    return sample_image_bilinear_masked(support.image, support.buffers.silhouette,
                                        proj[:, 0], proj[:, 1])


def aggregate_views(support_set: list[SupportView], target_camera: Camera,
                    mesh: TriangleMesh, params: AggregationParams = AggregationParams(),
                    target_buffers: ViewBuffers | None = None,
                    keep_diagnostics: bool = False) -> BlendResult:
    """Blend every support view into the target view.

    Returns the blended image (white where no view contributes), the known
    mask, and with ``keep_diagnostics`` the per-view weight, visibility,
    angle, and distance maps.
    """
    if not support_set:
        raise ValueError("support set is empty")
    if target_buffers is None:
        target_buffers = rasterize(mesh, target_camera)
    h, w = target_buffers.face_id.shape

    vis = [cross_view_visibility(v, target_buffers) for v in support_set]
    dts = [distance_transform(m) for m in vis]
    phis = [angular_difference(v, target_buffers, target_camera, m)
            for v, m in zip(support_set, vis)]
    excl = boundary_exclusion(vis, radius=params.boundary_radius)
    weights = blend_weights(vis, excl, phis, dts, alpha=params.alpha, beta=params.beta)

    known = weights.sum(axis=0) > 0.0
    blended = np.ones((h, w, 3), dtype=np.float64)
    if known.any():
        acc = np.zeros((int(known.sum()), 3), dtype=np.float64)
        for view, wmap, m in zip(support_set, weights, vis):
            active = m[known]
            if not active.any():
                continue
            sub = np.zeros_like(acc)
            pix = np.zeros((h, w), dtype=bool)
            pix[known] = active
            sub[active] = reproject_color(view, target_buffers, pix) * \
                wmap[pix][:, None]
            acc += sub
        blended[known] = acc

    if not keep_diagnostics:
        return BlendResult(blended=blended, known_mask=known)
    return BlendResult(
        blended=blended, known_mask=known, per_view_weights=weights,
        per_view_visibility=np.stack(vis), per_view_angle=np.stack(phis),
        per_view_distance=np.stack(dts))
