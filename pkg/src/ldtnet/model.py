"""The three-layer dual-head dehazing network.

Topology (NHWC, stride 1, same padding)::

    hazy(3) -> conv3x3(30) -> BN -> BReLU -> concat hazy -> (33)
            -> conv3x3(40) -> BN -> BReLU -> concat hazy -> (43)
            -> conv1x1(3) -> BReLU   = dehazed image
            -> conv1x1(1) -> BReLU   = transmission map

The two 1x1 heads are parallel branches off the same 43-channel features.
Training minimizes ``(1 - alpha) * L_D + alpha * L_T`` where both terms are
mean squared errors.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .errors import ContractError, DomainError, FormatError, ShapeError
from .tensor import BatchNormParams, ConvLayerParams

RGB = 3
FEATURES1 = 30
FEATURES2 = 40
DEFAULT_ALPHA = 0.4

# (name, kind, extents) for every block, in declaration order. Conv extents
# are (out, kh, kw, in); batchnorm extents are (channels,).
ARCHITECTURE = (
    ("layer1", "conv", (FEATURES1, 3, 3, RGB)),
    ("bn1", "bn", (FEATURES1,)),
    ("layer2", "conv", (FEATURES2, 3, 3, FEATURES1 + RGB)),
    ("bn2", "bn", (FEATURES2,)),
    ("head_dehaze", "conv", (RGB, 1, 1, FEATURES2 + RGB)),
    ("head_trans", "conv", (1, 1, 1, FEATURES2 + RGB)),
)


@dataclass(frozen=True)
class LdtNetParams:
    layer1: ConvLayerParams
    bn1: BatchNormParams
    layer2: ConvLayerParams
    bn2: BatchNormParams
    head_dehaze: ConvLayerParams
    head_trans: ConvLayerParams

    def __post_init__(self):
        for name, kind, extents in ARCHITECTURE:
            block = getattr(self, name)
            got = block.kernel.shape if kind == "conv" else block.gamma.shape
            if tuple(got) != extents:
                raise ShapeError(f"{name} does not match the fixed architecture", got, extents)

    def learnable(self) -> dict[str, np.ndarray]:
        """Trainable arrays keyed ``"<block>.<field>"``, in declaration order."""
        out = {}
        for name, kind, _ in ARCHITECTURE:
            block = getattr(self, name)
            fields = ("kernel", "bias") if kind == "conv" else ("gamma", "shift")
            for f in fields:
                out[f"{name}.{f}"] = getattr(block, f)
        return out

    def with_learnable(self, arrays: dict[str, np.ndarray]) -> "LdtNetParams":
        blocks = {}
        for key, value in arrays.items():
            name, f = key.split(".")
            blocks.setdefault(name, {})[f] = value
        return replace(self, **{n: replace(getattr(self, n), **fs) for n, fs in blocks.items()})

    def astype(self, dtype) -> "LdtNetParams":
        def cast(block):
            kw = {k: v.astype(dtype) for k, v in vars(block).items() if isinstance(v, np.ndarray)}
            return replace(block, **kw)

        return LdtNetParams(**{name: cast(getattr(self, name)) for name, _, _ in ARCHITECTURE})

    def equals(self, other: "LdtNetParams") -> bool:
        """Bit-exact equality of every array and scalar."""
        for name, _, _ in ARCHITECTURE:
            a, b = vars(getattr(self, name)), vars(getattr(other, name))
            for k, v in a.items():
                w = b[k]
                if isinstance(v, np.ndarray):
                    if v.dtype != w.dtype or v.shape != w.shape or v.tobytes() != w.tobytes():
                        return False
                elif v != w:
                    return False
        return True


@dataclass(frozen=True)
class LossWeights:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class ForwardTrace:
    mode: str
    params: LdtNetParams
    hazy: np.ndarray
    conv1_out: np.ndarray
    bn1_cache: T.BatchNormCache
    z1: np.ndarray  # bn1 output, BReLU input
    cat1: np.ndarray
    conv2_out: np.ndarray
    bn2_cache: T.BatchNormCache
    z2: np.ndarray
    cat2: np.ndarray
    zd: np.ndarray  # dehaze head pre-activation
    zt: np.ndarray  # transmission head pre-activation
    dehazed: np.ndarray
    transmission: np.ndarray

    def updated_params(self) -> LdtNetParams:
        """The input parameters with running batchnorm statistics advanced by this pass."""
        if self.mode != "train":
            return self.params
        return replace(self.params, bn1=self.bn1_cache.updated, bn2=self.bn2_cache.updated)


def init_params(seed: int, dtype=T.DEFAULT_DTYPE) -> LdtNetParams:
    """He-normal kernels (std ``sqrt(2 / fan_in)``), zero biases, identity batchnorm."""
    rng = np.random.default_rng(seed)
    blocks = {}
    for name, kind, extents in ARCHITECTURE:
        if kind == "conv":
            fan_in = extents[1] * extents[2] * extents[3]
            kernel = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=extents).astype(dtype)
            blocks[name] = ConvLayerParams(kernel, np.zeros(extents[0], dtype))
        else:
            blocks[name] = BatchNormParams.fresh(extents[0], dtype)
    return LdtNetParams(**blocks)


def _check_input(hazy) -> np.ndarray:
    x = T.as_tensor(hazy)
    if x.shape[3] != RGB:
        raise ShapeError("network input must have 3 channels", x.shape)
    if x.size and (np.nanmin(x) < 0 or np.nanmax(x) > 1 or not np.all(np.isfinite(x))):
        raise DomainError("network input values must lie in [0, 1]")
    return x


def forward(params: LdtNetParams, hazy, mode: str = "eval") -> ForwardTrace:
    x = _check_input(hazy)
    if x.dtype != params.layer1.kernel.dtype:
        x = x.astype(params.layer1.kernel.dtype)
    p1 = T.conv2d_forward(x, params.layer1)
    z1, c1 = T.batchnorm_forward(p1, params.bn1, mode)
    cat1 = T.concat_channels(T.brelu_forward(z1), x)
    p2 = T.conv2d_forward(cat1, params.layer2)
    z2, c2 = T.batchnorm_forward(p2, params.bn2, mode)
    cat2 = T.concat_channels(T.brelu_forward(z2), x)
    zd = T.conv2d_forward(cat2, params.head_dehaze)
    zt = T.conv2d_forward(cat2, params.head_trans)
    return ForwardTrace(
        mode=mode, params=params, hazy=x, conv1_out=p1, bn1_cache=c1, z1=z1, cat1=cat1, conv2_out=p2,
        bn2_cache=c2, z2=z2, cat2=cat2, zd=zd, zt=zt,
        dehazed=T.brelu_forward(zd), transmission=T.brelu_forward(zt),
    )


def _as_weights(w) -> LossWeights:
    return w if isinstance(w, LossWeights) else LossWeights(float(w))


def _check_truths(trace: ForwardTrace, clear, trans):
    clear = np.asarray(clear)
    trans = np.asarray(trans)
    if clear.shape != trace.dehazed.shape:
        raise ShapeError("clear truth shape differs from dehazed output", clear.shape, trace.dehazed.shape)
    if trans.shape != trace.transmission.shape:
        raise ShapeError("transmission truth shape differs from output", trans.shape, trace.transmission.shape)
    return clear, trans


def loss(trace: ForwardTrace, clear, trans, weights=DEFAULT_ALPHA) -> tuple[float, float, float]:
    """Return ``(total, L_D, L_T)`` as Python floats."""
    w = _as_weights(weights)
    clear, trans = _check_truths(trace, clear, trans)
    ld = float(np.mean(np.square(trace.dehazed.astype(np.float64) - clear)))
    lt = float(np.mean(np.square(trace.transmission.astype(np.float64) - trans)))
    return (1.0 - w.alpha) * ld + w.alpha * lt, ld, lt


def backward(trace: ForwardTrace, clear, trans, weights=DEFAULT_ALPHA) -> dict[str, np.ndarray]:
    """Exact gradient of the total loss, keyed like :meth:`LdtNetParams.learnable`."""
    if trace.mode != "train":
        raise ContractError("backward requires a train-mode forward trace")
    w = _as_weights(weights)
    clear, trans = _check_truths(trace, clear, trans)
    p = trace.params
    dt = trace.dehazed.dtype
    grads = {}

    g_d = (2.0 * (1.0 - w.alpha) / trace.dehazed.size) * (trace.dehazed - clear.astype(dt))
    g_t = (2.0 * w.alpha / trace.transmission.size) * (trace.transmission - trans.astype(dt))
    g_d = T.brelu_backward(trace.zd, g_d.astype(dt))
    g_t = T.brelu_backward(trace.zt, g_t.astype(dt))
    g_cat2_d, grads["head_dehaze.kernel"], grads["head_dehaze.bias"] = T.conv2d_backward(trace.cat2, p.head_dehaze, g_d)
    g_cat2_t, grads["head_trans.kernel"], grads["head_trans.bias"] = T.conv2d_backward(trace.cat2, p.head_trans, g_t)
    g_a2, _ = T.split_channels(g_cat2_d + g_cat2_t, FEATURES2)

    g_z2 = T.brelu_backward(trace.z2, g_a2)
    g_p2, grads["bn2.gamma"], grads["bn2.shift"] = T.batchnorm_backward(trace.bn2_cache, g_z2)
    g_cat1, grads["layer2.kernel"], grads["layer2.bias"] = T.conv2d_backward(trace.cat1, p.layer2, g_p2)
    g_a1, _ = T.split_channels(g_cat1, FEATURES1)

    g_z1 = T.brelu_backward(trace.z1, g_a1)
    g_p1, grads["bn1.gamma"], grads["bn1.shift"] = T.batchnorm_backward(trace.bn1_cache, g_z1)
    _, grads["layer1.kernel"], grads["layer1.bias"] = T.conv2d_backward(trace.hazy, p.layer1, g_p1)
    return {k: grads[k] for k in p.learnable()}


def dehaze(params: LdtNetParams, image) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode inference on an ``(H, W, 3)`` or ``(B, H, W, 3)`` image.

    Returns ``(dehazed, transmission)`` with the same leading shape as the input.
    """
    arr = np.asarray(image)
    squeeze = arr.ndim == 3
    trace = forward(params, arr[None] if squeeze else arr, mode="eval")
    if squeeze:
        return trace.dehazed[0], trace.transmission[0]
    return trace.dehazed, trace.transmission


# -- serialization -------------------------------------------------------------


def _entries(params: LdtNetParams) -> list[ckpt.Entry]:
    out = []
    for name, kind, extents in ARCHITECTURE:
        b = getattr(params, name)
        if kind == "conv":
            out.append(ckpt.Entry(ckpt.TAG_CONV, extents, [b.kernel, b.bias]))
        else:
            out.append(ckpt.Entry(ckpt.TAG_BN, extents, [b.gamma, b.shift, b.running_mean, b.running_var],
                                  (float(b.eps), float(b.momentum))))
    return out


def params_to_bytes(params: LdtNetParams) -> bytes:
    return ckpt.encode(ckpt.KIND_WEIGHTS, _entries(params.astype(np.float32)))


def params_from_bytes(data: bytes) -> LdtNetParams:
    _, entries, _ = ckpt.decode(data, expect_kind=ckpt.KIND_WEIGHTS)
    if len(entries) != len(ARCHITECTURE):
        raise FormatError(f"weight file has {len(entries)} layers, architecture needs {len(ARCHITECTURE)}")
    blocks = {}
    for e, (name, kind, extents) in zip(entries, ARCHITECTURE):
        tag = ckpt.TAG_CONV if kind == "conv" else ckpt.TAG_BN
        if e.tag != tag or e.extents != extents:
            raise FormatError(f"layer {name}: shape table entry {e.extents} (tag {e.tag}) "
                              f"violates the fixed architecture {extents}")
        try:
            if kind == "conv":
                blocks[name] = ConvLayerParams(*e.arrays)
            else:
                blocks[name] = BatchNormParams(*e.arrays, eps=e.scalars[0], momentum=e.scalars[1])
        except ValueError as exc:
            raise FormatError(f"layer {name}: {exc}") from exc
    return LdtNetParams(**blocks)


def save_params(params: LdtNetParams, path) -> None:
    ckpt.write_atomic(path, params_to_bytes(params))


def load_params(path) -> LdtNetParams:
    return params_from_bytes(ckpt.read_bytes(path))
