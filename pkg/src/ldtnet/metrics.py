"""MSE, PSNR and SSIM for images in [0, 1].

SSIM is computed on BT.601 luma with an 11x11 Gaussian window (sigma 1.5),
K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over all fully-contained
windows. Inputs may be ``(H, W)``, ``(H, W, C)`` or ``(B, H, W, C)``; batched
inputs are scored per image and averaged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, ShapeError

PSNR_CAP = 100.0
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class QualityScore:
    mse: float
    psnr: float
    ssim: float


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("images differ in shape", a.shape, b.shape)
    return a, b


def mse(a, b, mask=None) -> float:
    """Mean squared difference over all pixels and channels (optionally only where ``mask``)."""
    a, b = _pair(a, b)
    sq = np.square(a - b)
    if mask is None:
        return float(np.mean(sq))
    m = np.broadcast_to(np.asarray(mask, dtype=bool), sq.shape)
    if not m.any():
        raise DomainError("mask selects no pixels")
    return float(np.mean(sq[m]))


def psnr_from_mse(err: float) -> float:
    if err <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / err))


def psnr(a, b, mask=None) -> float:
    """``10 log10(1 / mse)`` in dB with peak 1; identical images give ``PSNR_CAP``."""
    return psnr_from_mse(mse(a, b, mask))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is its outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def to_luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.shape[-1] == 3:
        return img @ LUMA_WEIGHTS
    if img.shape[-1] == 1:
        return img[..., 0]
    raise ShapeError("expected 1 or 3 channels", img.shape)


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    x = sliding_window_view(x, k, axis=0) @ g
    return sliding_window_view(x, k, axis=1) @ g


def _ssim_gray(a: np.ndarray, b: np.ndarray) -> float:
    g = gaussian_window()
    if a.shape[0] < g.size or a.shape[1] < g.size:
        raise DomainError(f"SSIM needs images of at least {g.size}x{g.size}, got {a.shape}")
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    a, b = _pair(a, b)
    if a.ndim == 4:
        return float(np.mean([_ssim_gray(to_luma(x), to_luma(y)) for x, y in zip(a, b)]))
    return _ssim_gray(to_luma(a), to_luma(b))


def score(a, b) -> QualityScore:
    err = mse(a, b)
    return QualityScore(err, psnr_from_mse(err), ssim(a, b))
