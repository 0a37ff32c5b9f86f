"""Image quality metrics: PSNR, SSIM, and the feature distance.

PSNR and SSIM follow the usual conventions on images rescaled from
[-1,1] to [0,1]: PSNR with peak 1 capped at 99 dB, SSIM with 8x8 uniform
windows at stride 1 (sized for 32x32 images), C1=0.01^2, C2=0.03^2,
computed per channel and averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError
from .perceptual import distance

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class MetricReport:
    mse: float
    psnr_db: float
    ssim: float
    phi_dist: float | None = None


def _to_unit(img):
    img = np.asarray(img, dtype=np.float64)
    return (img + 1.0) / 2.0


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")


def mse(a, b):
    """Mean squared error on the [0,1] scale."""
    a, b = _to_unit(a), _to_unit(b)
    _check_pair(a, b)
    return float(np.mean(np.square(a - b)))


def psnr(a, b):
    """10*log10(1/MSE) with peak 1.0, capped at 99 dB."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / err), PSNR_CAP_DB))


def _window_means(x, k):
    """Means of all k x k windows at stride 1, via an integral image."""
    c = np.cumsum(np.cumsum(np.pad(x, ((1, 0), (1, 0))), axis=0), axis=1)
    s = c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]
    return s / (k * k)


def ssim(a, b, window=SSIM_WINDOW, c1=SSIM_C1, c2=SSIM_C2):
    a, b = _to_unit(a), _to_unit(b)
    _check_pair(a, b)
    if a.ndim != 3:
        raise ShapeError(f"expected (C,H,W) image, got {a.shape}")
    if a.shape[1] < window or a.shape[2] < window:
        raise ShapeError(f"image {a.shape} smaller than {window}x{window} window")
    vals = []
    for ch in range(a.shape[0]):
        x, y = a[ch], b[ch]
        mx = _window_means(x, window)
        my = _window_means(y, window)
        # biased (population) variances over each window
        vx = _window_means(x * x, window) - mx * mx
        vy = _window_means(y * y, window) - my * my
        cxy = _window_means(x * y, window) - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def metric_report(a, b, phi_params=None):
    """All metrics for one image pair (feature distance if phi given)."""
    pd = None
    if phi_params is not None:
        pd = float(distance(phi_params, np.asarray(a, np.float32),
                            np.asarray(b, np.float32)))
    return MetricReport(mse=mse(a, b), psnr_db=psnr(a, b), ssim=ssim(a, b),
                        phi_dist=pd)
