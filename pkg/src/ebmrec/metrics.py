"""PSNR and SSIM quality metrics, computed on magnitude images.

Both metrics compare magnitudes, so a global phase on both images changes
nothing.  PSNR uses the reference's maximum magnitude as the peak and is
capped at 99 dB (zero error reports exactly the cap).  SSIM follows the
classic formulation: 11x11 Gaussian window with sigma 1.5, K1 = 0.01,
K2 = 0.03, dynamic range fixed to the reference maximum (which makes the
score mildly asymmetric in its arguments; the reference goes first).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["MetricsReport", "psnr", "ssim", "evaluate_pair"]

PSNR_CAP = 99.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricsReport:
    psnr_db: float
    ssim: float


def _magnitude(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    return np.abs(img).astype(np.float64)


def _check_dims(reference: np.ndarray, test: np.ndarray) -> None:
    if np.shape(reference) != np.shape(test):
        raise ValueError(
            f"shape mismatch: reference {np.shape(reference)} vs test {np.shape(test)}"
        )


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB between magnitude images, capped at 99."""
    _check_dims(reference, test)
    ref, tst = _magnitude(reference), _magnitude(test)
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    peak = float(ref.max())
    if peak == 0.0:
        return 0.0
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(reference: np.ndarray, test: np.ndarray) -> float:
    """Mean local structural similarity between magnitude images."""
    _check_dims(reference, test)
    ref, tst = _magnitude(reference), _magnitude(test)
    if ref.ndim != 2:
        raise ValueError(f"expected 2-D images, got shape {ref.shape}")
    if min(ref.shape) < _SSIM_WINDOW:
        raise ValueError(f"images must be at least {_SSIM_WINDOW} pixels per side")

    win = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    peak = float(ref.max())
    c1 = (_SSIM_K1 * peak) ** 2
    c2 = (_SSIM_K2 * peak) ** 2

    def local_mean(img: np.ndarray) -> np.ndarray:
        v = sliding_window_view(img, (_SSIM_WINDOW, _SSIM_WINDOW))
        return np.tensordot(v, win, axes=([2, 3], [0, 1]))

    mu_r = local_mean(ref)
    mu_t = local_mean(tst)
    var_r = local_mean(ref * ref) - mu_r * mu_r
    var_t = local_mean(tst * tst) - mu_t * mu_t
    cov = local_mean(ref * tst) - mu_r * mu_t

    num = (2.0 * mu_r * mu_t + c1) * (2.0 * cov + c2)
    den = (mu_r * mu_r + mu_t * mu_t + c1) * (var_r + var_t + c2)
    return float(np.mean(num / den))


def evaluate_pair(reference: np.ndarray, test: np.ndarray) -> MetricsReport:
    """Both metrics at once; raises on dimension mismatch."""
    return MetricsReport(psnr_db=psnr(reference, test), ssim=ssim(reference, test))
