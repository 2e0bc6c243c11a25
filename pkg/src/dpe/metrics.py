"""Image quality metrics: PSNR, SSIM, mean absolute (L1) error.

SSIM uses the standard windowed form: 11x11 Gaussian window sigma=1.5,
K1=0.01, K2=0.03, evaluated only where the window fits entirely inside
the image ('valid' positions), averaged over positions and channels.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import fftconvolve

from .plane import ImagePlane, check_same_shape

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: ImagePlane, b: ImagePlane, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 99 dB for near-identical planes."""
    check_same_shape(a, b)
    d = a.data - b.data
    mse = float(np.mean(d * d))
    if mse < 1e-12:
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak * peak / mse)


def l1_error(a: ImagePlane, b: ImagePlane) -> float:
    check_same_shape(a, b)
    return float(np.mean(np.abs(a.data - b.data)))


def _ssim_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    k1 = np.exp(-(ax * ax) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    w = np.outer(k1, k1)
    return w / w.sum()


def ssim(a: ImagePlane, b: ImagePlane, peak: float = 1.0) -> float:
    check_same_shape(a, b)
    if a.height < SSIM_WINDOW or a.width < SSIM_WINDOW:
        raise ValueError(
            f"image must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM"
        )
    w = _ssim_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    values = []
    for c in range(a.channels):
        x = a.data[c]
        y = b.data[c]
        mu_x = fftconvolve(x, w, mode="valid")
        mu_y = fftconvolve(y, w, mode="valid")
        xx = fftconvolve(x * x, w, mode="valid") - mu_x * mu_x
        yy = fftconvolve(y * y, w, mode="valid") - mu_y * mu_y
        xy = fftconvolve(x * y, w, mode="valid") - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))
