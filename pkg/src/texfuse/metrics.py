"""Image quality scoring: PSNR, single-scale SSIM, and turntable sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .meshes import TriangleMesh
from .raster import RenderSettings, make_turntable_camera, rasterize, render_textured_from_buffers

PSNR_CAP_DB = 99.0
_LUMA = np.array([0.299, 0.587, 0.114])


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB for intensities in [0, 1].

    Identical inputs (MSE 0) report the 99 dB sentinel cap.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            return PSNR_CAP_DB
        diff = a[m] - b[m]
    else:
        diff = a - b
    mse = float(np.mean(diff ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _to_gray(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        return arr @ _LUMA
    return arr


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g1 = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g1, g1)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11,
         sigma: float = 1.5, c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> float:
    """Single-scale SSIM on [0, 1] intensities, Rec. 601 luma for color input.

    Gaussian-weighted 11x11 windows, averaged over positions where the full
    window fits inside the image.
    """
    x = _to_gray(a)
    y = _to_gray(b)
    if x.shape != y.shape:
        raise ValueError("images must share dimensions")
    if min(x.shape) < window_size:
        raise ValueError(f"image smaller than the {window_size}x{window_size} window")
    win = gaussian_window(window_size, sigma)

    def filt(img):
        full = ndimage.correlate(img, win, mode="constant", cval=0.0)
        off = window_size // 2
        return full[off:img.shape[0] - off, off:img.shape[1] - off]

    mu_x = filt(x)
    mu_y = filt(y)
    xx = filt(x * x) - mu_x * mu_x
    yy = filt(y * y) - mu_y * mu_y
    xy = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    azimuths: list[float]
    psnr_values: list[float]
    ssim_values: list[float]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["azimuth", "psnr_db", "ssim"])
            for az, p, s in zip(self.azimuths, self.psnr_values, self.ssim_values):
                writer.writerow([f"{az:g}", f"{p:.6f}", f"{s:.6f}"])
            writer.writerow(["mean", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}"])

    def format_table(self) -> str:
        lines = [f"{'azimuth':>8}  {'PSNR (dB)':>10}  {'SSIM':>8}"]
        for az, p, s in zip(self.azimuths, self.psnr_values, self.ssim_values):
            lines.append(f"{az:>8g}  {p:>10.3f}  {s:>8.4f}")
        lines.append(f"{'mean':>8}  {self.mean_psnr:>10.3f}  {self.mean_ssim:>8.4f}")
        return "\n".join(lines)


def turntable_eval(mesh: TriangleMesh, texture, ground_truth_provider,
                   n_views: int = 90, spacing: float = 4.0,
                   settings: RenderSettings = RenderSettings(),
                   mask_to_silhouette: bool = False) -> EvalReport:
    """Score turntable renders of a texture against provided ground truth.

    ``ground_truth_provider`` is a callable azimuth -> image or a mapping
    keyed by azimuth. Scoring is full-frame by default; with
    ``mask_to_silhouette`` only covered pixels count toward PSNR.
    """
    azimuths = [i * spacing for i in range(n_views)]
    psnr_values, ssim_values = [], []
    for az in azimuths:
        if callable(ground_truth_provider):
            gt = ground_truth_provider(az)
        else:
            try:
                gt = ground_truth_provider[az]
            except KeyError as exc:
                raise KeyError(f"ground truth provider has no view at {az}") from exc
        camera = make_turntable_camera(az, settings)
        buffers = rasterize(mesh, camera)
        rendered = render_textured_from_buffers(buffers, texture)
        mask = buffers.silhouette if mask_to_silhouette else None
        psnr_values.append(psnr(rendered, gt, mask))
        ssim_values.append(ssim(rendered, gt))
    return EvalReport(azimuths=azimuths, psnr_values=psnr_values, ssim_values=ssim_values)
