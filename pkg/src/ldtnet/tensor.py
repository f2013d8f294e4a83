"""Dense NHWC tensor numerics with hand-written reverse-mode gradients.

Every image-valued quantity is a numpy array with axes ``(batch, height,
width, channel)``. Storage is float32 by default; all functions preserve the
floating dtype they are given, which lets gradient checks run in float64.
Reductions (bias gradients, batch statistics) accumulate in float64.

Convolution is direct, stride 1, implemented as a shifted-window gather
("im2col") followed by a single matrix product.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, DegenerateBatchError, ShapeError

DEFAULT_DTYPE = np.float32
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9


def as_tensor(x, dtype=None) -> np.ndarray:
    """Return ``x`` as a contiguous 4-axis floating array (no copy if already one)."""
    arr = np.asarray(x)
    if dtype is None:
        dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else DEFAULT_DTYPE
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if arr.ndim != 4:
        raise ShapeError("expected a 4-axis (batch, height, width, channel) tensor", arr.shape)
    return arr


@dataclass(frozen=True)
class ConvLayerParams:
    """Kernel shaped ``(out_channels, kh, kw, in_channels)`` and a bias of length ``out_channels``."""

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel.ndim != 4:
            raise ShapeError("conv kernel must be (out, kh, kw, in)", self.kernel.shape)
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError("conv bias length must equal out channels", self.bias.shape, self.kernel.shape)

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[3]

    @property
    def ksize(self) -> tuple[int, int]:
        return self.kernel.shape[1], self.kernel.shape[2]

    @property
    def same_padding(self) -> int:
        return (self.kernel.shape[1] - 1) // 2


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPSILON
    momentum: float = BN_MOMENTUM

    def __post_init__(self):
        n = self.gamma.shape
        for name in ("shift", "running_mean", "running_var"):
            if getattr(self, name).shape != n:
                raise ShapeError(f"batchnorm {name} length differs from gamma", getattr(self, name).shape, n)
        if not self.eps > 0:
            raise ValueError("batchnorm eps must be positive")
        if not 0 < self.momentum < 1:
            raise ValueError("batchnorm momentum must lie in (0, 1)")
        if np.any(self.running_var < 0):
            raise ValueError("batchnorm running variance must be non-negative")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def fresh(cls, channels: int, dtype=DEFAULT_DTYPE) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype),
            shift=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
        )


@dataclass(frozen=True)
class BatchNormCache:
    mode: str
    xhat: np.ndarray | None = None
    inv_std: np.ndarray | None = None
    gamma: np.ndarray | None = None
    updated: BatchNormParams | None = field(default=None, repr=False)


# -- convolution ---------------------------------------------------------------


def _check_conv(x: np.ndarray, params: ConvLayerParams, pad: int):
    if x.ndim != 4 or x.shape[3] != params.in_channels:
        raise ShapeError("conv input channels do not match kernel", x.shape, params.kernel.shape)
    kh, kw = params.ksize
    ho, wo = x.shape[1] + 2 * pad - kh + 1, x.shape[2] + 2 * pad - kw + 1
    if pad < 0 or ho < 1 or wo < 1:
        raise ShapeError(f"conv with padding {pad} yields empty output", x.shape, params.kernel.shape)
    return ho, wo


def _im2col(x: np.ndarray, kh: int, kw: int, pad: int, ho: int, wo: int) -> np.ndarray:
    b, _, _, c = x.shape
    if kh == 1 and kw == 1 and pad == 0:
        return x.reshape(b * ho * wo, c)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    cols = np.empty((b, ho, wo, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + ho, j:j + wo, :]
    return cols.reshape(b * ho * wo, kh * kw * c)


def conv2d_forward(x, params: ConvLayerParams, zero_pad: int | None = None) -> np.ndarray:
    """Stride-1 cross-correlation with zero padding.

    ``zero_pad`` defaults to ``(k - 1) // 2`` which preserves spatial extents
    for odd kernels.
    """
    x = as_tensor(x)
    pad = params.same_padding if zero_pad is None else zero_pad
    ho, wo = _check_conv(x, params, pad)
    kh, kw = params.ksize
    cols = _im2col(x, kh, kw, pad, ho, wo)
    kmat = params.kernel.reshape(params.out_channels, -1).astype(x.dtype, copy=False)
    out = cols @ kmat.T
    out += params.bias.astype(x.dtype, copy=False)
    return out.reshape(x.shape[0], ho, wo, params.out_channels)


def conv2d_backward(x, params: ConvLayerParams, upstream, zero_pad: int | None = None):
    """Return ``(grad_input, grad_kernel, grad_bias)`` for :func:`conv2d_forward`."""
    x = as_tensor(x)
    pad = params.same_padding if zero_pad is None else zero_pad
    ho, wo = _check_conv(x, params, pad)
    b, h, w, c = x.shape
    cout = params.out_channels
    upstream = np.asarray(upstream, dtype=x.dtype)
    if upstream.shape != (b, ho, wo, cout):
        raise ShapeError("upstream gradient does not match conv output", upstream.shape, (b, ho, wo, cout))
    kh, kw = params.ksize
    g2 = upstream.reshape(-1, cout)
    cols = _im2col(x, kh, kw, pad, ho, wo)
    grad_kernel = (g2.T @ cols).reshape(params.kernel.shape)
    grad_bias = g2.sum(axis=0, dtype=np.float64).astype(x.dtype)
    kmat = params.kernel.reshape(cout, -1).astype(x.dtype, copy=False)
    gcols = g2 @ kmat
    if kh == 1 and kw == 1 and pad == 0:
        return gcols.reshape(x.shape), grad_kernel, grad_bias
    gcols = gcols.reshape(b, ho, wo, kh, kw, c)
    gxp = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + ho, j:j + wo, :] += gcols[:, :, :, i, j, :]
    grad_input = gxp[:, pad:pad + h, pad:pad + w, :] if pad else gxp
    return np.ascontiguousarray(grad_input), grad_kernel, grad_bias


# -- bilateral ReLU --------------------------------------------------------------


def brelu_forward(x) -> np.ndarray:
    """Clamp to ``[0, 1]``."""
    return np.clip(np.asarray(x), 0.0, 1.0)


def brelu_backward(x, upstream) -> np.ndarray:
    """Pass the gradient where ``0 < x < 1``; the subgradient at both kinks is 0."""
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if x.shape != upstream.shape:
        raise ShapeError("brelu upstream gradient shape differs from input", upstream.shape, x.shape)
    inside = (x > 0) & (x < 1)
    return np.where(inside, upstream, 0).astype(np.result_type(upstream.dtype, np.float32), copy=False)


# -- batch normalization -------------------------------------------------------


def batchnorm_forward(x, params: BatchNormParams, mode: str = "train"):
    """Per-channel normalization over the batch and spatial axes.

    In ``"train"`` mode batch statistics are used and the returned cache holds
    a copy of ``params`` with its running statistics advanced by the moving
    average ``running = momentum * running + (1 - momentum) * batch``
    (biased batch variance). ``"eval"`` mode uses the running statistics only.
    """
    x = as_tensor(x)
    if x.shape[3] != params.channels:
        raise ShapeError("batchnorm channel count mismatch", x.shape, params.gamma.shape)
    dt = x.dtype
    gamma = params.gamma.astype(dt, copy=False)
    shift = params.shift.astype(dt, copy=False)
    if mode == "eval":
        inv_std = (1.0 / np.sqrt(params.running_var.astype(np.float64) + params.eps)).astype(dt)
        out = (x - params.running_mean.astype(dt)) * (inv_std * gamma) + shift
        return out, BatchNormCache(mode="eval")
    if mode != "train":
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    n = x.shape[0] * x.shape[1] * x.shape[2]
    if n <= 1:
        raise DegenerateBatchError(f"batch statistics need more than one value per channel, got {n}")
    flat = x.reshape(n, -1)
    mean = flat.mean(axis=0, dtype=np.float64)
    centered = flat - mean
    var = np.einsum("ij,ij->j", centered, centered) / n
    inv_std = 1.0 / np.sqrt(var + params.eps)
    xhat = (centered * inv_std).astype(dt).reshape(x.shape)
    out = xhat * gamma + shift

    m = params.momentum
    rdt = params.running_mean.dtype
    updated = replace(
        params,
        running_mean=(m * params.running_mean + (1 - m) * mean).astype(rdt),
        running_var=(m * params.running_var + (1 - m) * var).astype(rdt),
    )
    cache = BatchNormCache(mode="train", xhat=xhat, inv_std=inv_std.astype(dt), gamma=gamma, updated=updated)
    return out, cache


def batchnorm_backward(cache: BatchNormCache, upstream):
    """Return ``(grad_input, grad_gamma, grad_shift)`` for a train-mode forward."""
    if cache.mode != "train":
        raise ContractError("batchnorm_backward requires a cache from a train-mode forward")
    upstream = np.asarray(upstream, dtype=cache.xhat.dtype)
    if upstream.shape != cache.xhat.shape:
        raise ShapeError("batchnorm upstream gradient shape mismatch", upstream.shape, cache.xhat.shape)
    c = upstream.shape[3]
    g = upstream.reshape(-1, c)
    xhat = cache.xhat.reshape(-1, c)
    n = g.shape[0]
    grad_shift = g.sum(axis=0, dtype=np.float64)
    grad_gamma = np.einsum("ij,ij->j", g.astype(np.float64), xhat)
    dxhat = g * cache.gamma
    sum_dxhat = grad_shift * cache.gamma
    sum_dxhat_xhat = grad_gamma * cache.gamma
    dx = (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / n) * cache.inv_std
    dt = cache.xhat.dtype
    return dx.astype(dt).reshape(upstream.shape), grad_gamma.astype(dt), grad_shift.astype(dt)


# -- channel concatenation -----------------------------------------------------


def concat_channels(a, b) -> np.ndarray:
    """Stack along the channel axis, ``a``'s channels first."""
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim != 4 or b.ndim != 4 or a.shape[:3] != b.shape[:3]:
        raise ShapeError("concat_channels needs equal batch/height/width", a.shape, b.shape)
    return np.concatenate([a, b.astype(a.dtype, copy=False)], axis=3)


def split_channels(x, n_first: int):
    """Inverse of :func:`concat_channels`."""
    return x[..., :n_first], x[..., n_first:]
