"""Mini-batch training with Adam, per-epoch validation and best-checkpoint retention."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as M
from .dataset import HazeTriple
from .errors import ConfigError, DataError, NumericError
from .metrics import mse as mse_metric, psnr_from_mse
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "steps", "train_loss", "train_ld", "train_lt", "val_mse", "val_psnr", "best")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    alpha: float = M.DEFAULT_ALPHA
    batch_size: int = 4
    epochs: int = 30
    seed: int = 0
    crop: int | None = 64
    clip_norm: float | None = None
    # stop after this many epochs without a validation improvement; None runs all epochs
    patience: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.crop is not None and self.crop < 2:
            raise ConfigError("crop size must be >= 2")


@dataclass
class TrainResult:
    params: M.LdtNetParams  # best by validation MSE (final params if no validation set)
    final_params: M.LdtNetParams
    state: AdamState
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mse: float = math.inf


def stack_batch(triples: list[HazeTriple], rng: np.random.Generator | None, crop: int | None):
    """Stack ``(hazy, clear, transmission)`` batches, random-cropping when ``crop`` is set."""
    hazy, clear, trans = [], [], []
    for tr in triples:
        h, w = tr.hazy.shape[:2]
        if crop is not None and rng is not None and (h > crop or w > crop):
            ch, cw = min(crop, h), min(crop, w)
            y = int(rng.integers(0, h - ch + 1))
            x = int(rng.integers(0, w - cw + 1))
            sl = (slice(y, y + ch), slice(x, x + cw))
        else:
            sl = (slice(None), slice(None))
        hazy.append(tr.hazy[sl])
        clear.append(tr.clear[sl])
        trans.append(tr.transmission[sl])
    try:
        return (np.stack(hazy).astype(np.float32), np.stack(clear).astype(np.float32),
                np.stack(trans).astype(np.float32))
    except ValueError as exc:
        raise DataError(f"cannot batch images of different sizes: {exc}") from exc


def dataset_loss(params: M.LdtNetParams, triples: list[HazeTriple], alpha: float,
                 batch_size: int = 4, mode: str = "train") -> float:
    """Mean total loss over ``triples`` (full frames, fixed order, no parameter update)."""
    totals = []
    for i in range(0, len(triples), batch_size):
        hazy, clear, trans = stack_batch(triples[i:i + batch_size], None, None)
        trace = M.forward(params, hazy, mode)
        totals.append(M.loss(trace, clear, trans, alpha)[0])
    return float(np.mean(totals))


def validation_mse(params: M.LdtNetParams, triples: list[HazeTriple]) -> float:
    """Mean per-image MSE between the eval-mode dehazed output and the clear truth."""
    errs = []
    for tr in triples:
        dehazed, _ = M.dehaze(params, tr.hazy)
        errs.append(mse_metric(dehazed, tr.clear))
    return float(np.mean(errs))


def train_step(params: M.LdtNetParams, state: AdamState, hazy, clear, trans, alpha: float):
    """Forward, backward and one Adam update. Returns ``(params, state, (total, L_D, L_T))``."""
    trace = M.forward(params, hazy, "train")
    losses = M.loss(trace, clear, trans, alpha)
    if not all(math.isfinite(v) for v in losses):
        raise NumericError(f"non-finite training loss {losses}")
    grads = M.backward(trace, clear, trans, alpha)
    params = trace.updated_params()
    new_arrays, state = adam_step(params.learnable(), grads, state)
    return params.with_learnable(new_arrays), state, losses


def train(train_set: list[HazeTriple], val_set: list[HazeTriple], config: TrainConfig,
          params: M.LdtNetParams | None = None, on_improve=None, on_epoch=None) -> TrainResult:
    """Run ``config.epochs`` epochs over ``train_set``.

    ``on_improve(params, state, epoch)`` is called whenever validation MSE
    reaches a new best, ``on_epoch(row)`` after every epoch. A non-finite loss
    raises :class:`NumericError`; anything already handed to ``on_improve``
    stays valid.
    """
    if not train_set:
        raise DataError("training set is empty")
    rng = np.random.default_rng([config.seed, 1])
    if params is None:
        params = M.init_params(config.seed)
    state = AdamState(lr=config.lr, clip_norm=config.clip_norm)
    result = TrainResult(params=params, final_params=params, state=state)
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        sums = np.zeros(3)
        steps = 0
        for i in range(0, len(order), config.batch_size):
            batch = [train_set[j] for j in order[i:i + config.batch_size]]
            hazy, clear, trans = stack_batch(batch, rng, config.crop)
            params, state, losses = train_step(params, state, hazy, clear, trans, config.alpha)
            sums += losses
            steps += 1
        means = sums / max(steps, 1)
        val = validation_mse(params, val_set) if val_set else math.nan
        improved = bool(val_set) and val < result.best_val_mse
        if improved:
            result.best_val_mse, result.best_epoch, result.params = val, epoch, params
            since_best = 0
            if on_improve:
                on_improve(params, state, epoch)
        else:
            since_best += 1
        row = {
            "epoch": epoch, "steps": state.step_count, "train_loss": float(means[0]),
            "train_ld": float(means[1]), "train_lt": float(means[2]), "val_mse": val,
            "val_psnr": psnr_from_mse(val) if val_set else math.nan, "best": int(improved),
        }
        result.log.append(row)
        log.info("epoch %d loss %.6f val_mse %.6f%s", epoch, row["train_loss"], val, " *" if improved else "")
        if on_epoch:
            on_epoch(row)
        if config.patience is not None and val_set and since_best >= config.patience:
            log.info("early stop after %d epochs without improvement", since_best)
            break
    result.final_params, result.state = params, state
    if not val_set:
        result.params = params
    return result


def format_log(rows: list[dict], config: TrainConfig, notes: list[str] = ()) -> str:
    """Tab-separated training log with a versioned header and the run configuration."""
    lines = ["#ldtnet-trainlog\tversion=1", "#config\t" + json.dumps(asdict(config), sort_keys=True)]
    lines += [f"#note\t{n}" for n in notes]
    lines.append("\t".join(LOG_FIELDS))
    for r in rows:
        lines.append("\t".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in LOG_FIELDS))
    return "\n".join(lines) + "\n"
