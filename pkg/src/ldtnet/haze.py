"""Haze synthesis with the atmospheric scattering model, plus perturbations.

A hazy observation is ``I = J * t + A * (1 - t)`` with transmission
``t = exp(-beta * d)``. The airlight ``A`` is one scalar shared by all three
colour channels. Images here are ``(H, W, C)`` or ``(B, H, W, C)`` arrays;
transmission maps carry a trailing singleton channel and broadcast over RGB.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

T_MIN = 0.05
D_MAX = 5.0
NOISE_KINDS = ("gaussian", "poisson", "saltpepper")
SCALE_FACTORS = (1.0, 0.8, 0.6, 0.4)


@dataclass(frozen=True)
class HazeParams:
    A: float
    beta: float

    def __post_init__(self):
        if not 0.0 < self.A <= 1.0:
            raise DomainError(f"atmosphere light A must lie in (0, 1], got {self.A}")
        if not self.beta > 0.0:
            raise DomainError(f"scattering coefficient beta must be positive, got {self.beta}")


def _check_unit(name, arr, low_open=False):
    if arr.size == 0:
        return
    lo, hi = float(np.min(arr)), float(np.max(arr))
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi > 1.0 or lo < 0.0 or (low_open and lo <= 0.0):
        interval = "(0, 1]" if low_open else "[0, 1]"
        raise DomainError(f"{name} values must lie in {interval}, got range [{lo}, {hi}]")


def _float_dtype(arr):
    return arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float32


def transmission_from_depth(depth, beta: float) -> np.ndarray:
    """``exp(-beta * depth)``; depth must be non-negative and finite."""
    d = np.asarray(depth)
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    if d.size and (not np.all(np.isfinite(d)) or d.min() < 0):
        raise DomainError("depth must be finite and non-negative")
    return np.exp(-beta * d.astype(np.float64)).astype(_float_dtype(d))


def apply_haze(clear, t, A: float) -> np.ndarray:
    """Forward scattering model. ``t`` must broadcast against ``clear``."""
    J, t = np.asarray(clear), np.asarray(t)
    _check_unit("clear image", J)
    _check_unit("transmission", t, low_open=True)
    HazeParams(A, 1.0)
    t64 = t.astype(np.float64)
    out = J.astype(np.float64) * t64 + A * (1.0 - t64)
    return np.clip(out, 0.0, 1.0).astype(_float_dtype(J))


def invert_haze(hazy, t, A: float, t_min: float = T_MIN) -> np.ndarray:
    """Algebraic inverse of :func:`apply_haze` with ``t`` floored at ``t_min``, clamped to [0, 1]."""
    I, t = np.asarray(hazy), np.asarray(t)
    _check_unit("hazy image", I)
    _check_unit("transmission", t, low_open=True)
    HazeParams(A, 1.0)
    t64 = np.maximum(t.astype(np.float64), t_min)
    J = (I.astype(np.float64) - A * (1.0 - t64)) / t64
    return np.clip(J, 0.0, 1.0).astype(_float_dtype(I))


def normalize_depth(depth, d_max: float = D_MAX) -> np.ndarray:
    """Min-max rescale a depth map to ``[0, d_max]`` (constant maps become 0)."""
    d = np.asarray(depth, dtype=np.float64)
    lo, hi = float(d.min()), float(d.max())
    if hi - lo <= 0:
        return np.zeros_like(d, dtype=np.float32)
    return (d_max * (d - lo) / (hi - lo)).astype(np.float32)


# -- perturbations -------------------------------------------------------------


def add_noise(image, kind: str, level: float, seed: int) -> np.ndarray:
    """Corrupt ``image`` (values in [0, 1]) with one of three noise models.

    ``gaussian``: additive N(0, level**2). ``poisson``: photon-count resampling,
    ``Poisson(v / level) * level``, so ``level`` is the inverse photon count.
    ``saltpepper``: a ``level`` fraction of pixels (all channels together) set to
    0 or 1 with equal probability. Output is clamped to [0, 1].
    """
    img = np.asarray(image)
    _check_unit("image", img)
    dt = _float_dtype(img)
    rng = np.random.default_rng(seed)
    if kind == "saltpepper":
        if not 0 < level <= 1:
            raise DomainError(f"salt & pepper fraction must lie in (0, 1], got {level}")
        out = img.astype(dt, copy=True)
        hit = rng.random(img.shape[:-1]) < level
        salt = rng.random(img.shape[:-1]) < 0.5
        out[hit & salt] = 1.0
        out[hit & ~salt] = 0.0
        return out
    if kind not in NOISE_KINDS:
        raise DomainError(f"unknown noise kind {kind!r}")
    if level < 0:
        raise DomainError(f"noise level must be non-negative, got {level}")
    if level == 0:
        return img.astype(dt, copy=True)
    x = img.astype(np.float64)
    if kind == "gaussian":
        out = x + rng.normal(0.0, level, size=x.shape)
    else:
        out = rng.poisson(x / level) * level
    return np.clip(out, 0.0, 1.0).astype(dt)


def _round_extent(n: float) -> int:
    return max(1, int(math.floor(n + 0.5)))


def _interp_axis(arr: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = arr.shape[axis]
    if n_out == n_in:
        return arr
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = pos - i0
    shape = [1] * arr.ndim
    shape[axis] = n_out
    w = w.reshape(shape)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    return a + w * (b - a)


def resize(image, height: int, width: int) -> np.ndarray:
    """Bilinear resampling (half-pixel centres, edge clamp) to an exact size.

    Accepts ``(H, W)``, ``(H, W, C)`` or ``(B, H, W, C)``.
    """
    arr = np.asarray(image)
    hax = 1 if arr.ndim == 4 else 0
    if (arr.shape[hax], arr.shape[hax + 1]) == (height, width):
        return arr.copy()
    x = arr.astype(np.float64)
    x = _interp_axis(x, hax, height)
    x = _interp_axis(x, hax + 1, width)
    return x.astype(_float_dtype(arr))


def rescale_image(image, factor: float) -> np.ndarray:
    """Bilinear rescale by ``factor``; extents round to the nearest integer, minimum 1."""
    if not factor > 0:
        raise DomainError(f"scale factor must be positive, got {factor}")
    arr = np.asarray(image)
    hax = 1 if arr.ndim == 4 else 0
    h, w = arr.shape[hax], arr.shape[hax + 1]
    return resize(arr, _round_extent(h * factor), _round_extent(w * factor))
