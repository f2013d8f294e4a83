"""Adam with bias-corrected moments, operating on dicts of named arrays."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt
from .errors import ConfigError, FormatError, NumericError, ShapeError


@dataclass(frozen=True)
class AdamState:
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # global-norm clipping threshold; None disables clipping
    clip_norm: float | None = None

    def __post_init__(self):
        if self.lr <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigError("invalid Adam hyperparameters")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One Adam update. Returns ``(new_params, new_state)``; inputs are not modified.

    A non-finite gradient aborts the step with a :class:`NumericError` naming
    the offending block.
    """
    if grads.keys() != params.keys():
        missing = sorted(set(params) ^ set(grads))
        raise ShapeError(f"gradient blocks do not match parameter blocks: {missing}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} has wrong shape", g.shape, params[name].shape)
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericError(f"non-finite gradient in {name} ({bad} entries); step aborted")

    scale = 1.0
    if state.clip_norm is not None:
        total = np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
        if total > state.clip_norm:
            scale = state.clip_norm / total

    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name] * scale if scale != 1.0 else grads[name]
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        m_new[name] = m.astype(p.dtype, copy=False)
        v_new[name] = v.astype(p.dtype, copy=False)
        update = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        new_params[name] = (p - update).astype(p.dtype, copy=False)
    return new_params, replace(state, first_moment=m_new, second_moment=v_new, step_count=t)


# -- checkpointing -------------------------------------------------------------

_META = "<Qddddd"


def state_to_bytes(state: AdamState, order: list[str]) -> bytes:
    """Serialize moments in ``order`` (the parameter declaration order)."""
    entries = []
    for name in order:
        m = state.first_moment.get(name)
        if m is None:
            raise FormatError(f"optimizer state has no moments for {name}")
        entries.append(ckpt.Entry(ckpt.TAG_MOMENT, tuple(m.shape), [m, state.second_moment[name]]))
    meta = (state.step_count, state.lr, state.beta1, state.beta2, state.eps, state.clip_norm or 0.0)
    return ckpt.encode(ckpt.KIND_ADAM, entries, struct.pack(_META, *meta))


def state_from_bytes(data: bytes, shapes: dict[str, tuple[int, ...]]) -> AdamState:
    _, entries, meta = ckpt.decode(data, expect_kind=ckpt.KIND_ADAM, meta_fmt=_META)
    if len(entries) != len(shapes):
        raise FormatError(f"optimizer state has {len(entries)} blocks, expected {len(shapes)}")
    m, v = {}, {}
    for e, (name, shape) in zip(entries, shapes.items()):
        if e.tag != ckpt.TAG_MOMENT or e.extents != tuple(shape):
            raise FormatError(f"optimizer block {name}: extents {e.extents} do not match {tuple(shape)}")
        m[name], v[name] = e.arrays
        if np.any(v[name] < 0):
            raise FormatError(f"optimizer block {name}: negative second moment")
    step, lr, b1, b2, eps, clip = meta
    try:
        return AdamState(m, v, int(step), lr, b1, b2, eps, clip if clip > 0 else None)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def save_state(state: AdamState, path, order: list[str]) -> None:
    ckpt.write_atomic(path, state_to_bytes(state, order))


def load_state(path, shapes: dict[str, tuple[int, ...]]) -> AdamState:
    return state_from_bytes(ckpt.read_bytes(path), shapes)
