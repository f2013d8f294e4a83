"""``ldtnet`` command line: synth, train, dehaze, eval, sweep-alpha.

Settings resolve as command-line flags > ``--config`` JSON file > built-in
defaults. The config file is a JSON object whose keys are long flag names
(``batch_size`` or ``batch-size``); a nested object named after a subcommand
overrides the top-level keys for that subcommand only::

    {"seed": 3, "threads": 1, "train": {"epochs": 50, "alpha": 0.4}}

Failures print one line ``ldtnet: error <CODE>: <message>`` on stderr and exit
with 2 (configuration), 3 (data) or 4 (numeric failure).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dataset as D
from . import evaluation as E
from . import model as M
from . import scenes
from .errors import ConfigError, DataError, LdtNetError
from .haze import D_MAX, HazeParams
from .images import load_image, save_image
from .runtime import thread_limit

log = logging.getLogger("ldtnet")

DEFAULTS = {
    "threads": 1,
    "out": "ldtnet-out",
    # synth
    "count": 200,
    "val_count": 40,
    "test_count": scenes.EVAL_SOURCE_COUNT,
    "source_count": 50,
    "sources": None,
    "size": "96x128",
    "a_range": "0.7,1.0",
    "beta_range": "0.5,1.5",
    "d_max": D_MAX,
    # train
    "data": None,
    "lr": 1e-3,
    "alpha": M.DEFAULT_ALPHA,
    "batch_size": 4,
    "epochs": 30,
    "crop": 64,
    "patience": None,
    "clip_norm": None,
    # dehaze / eval
    "weights": None,
    "transmission": False,
    "suite": "STANDARD",
    "model": "network",
    "image_count": scenes.EVAL_SOURCE_COUNT,
    "no_figures": False,
    # sweep-alpha
    "alphas": "0,0.2,0.4,0.6,0.8,1.0",
    "seeds": None,
}
STOCHASTIC = {"synth", "train", "sweep-alpha"}
CROP_NOTE = "random crops replace full-frame training at desk scale"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _pair(text, cast=float, sep=","):
    try:
        a, b = (cast(v) for v in str(text).split(sep))
    except ValueError as exc:
        raise ConfigError(f"expected two values separated by {sep!r}, got {text!r}") from exc
    return a, b


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=S, help="RNG seed (required for stochastic commands)")
    common.add_argument("--threads", type=int, default=S, help="BLAS threads; 1 is bit-reproducible (default)")
    common.add_argument("--config", default=S, help="JSON config file")
    common.add_argument("--out", default=S, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=S)

    p = _Parser(prog="ldtnet", description="Dual-task single-image dehazing network.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="synthesize hazy training/validation/test splits")
    s.add_argument("--count", type=int, default=S, help="training triples")
    s.add_argument("--val-count", type=int, default=S)
    s.add_argument("--test-count", type=int, default=S, help="held-out triples at A=0.85, beta=1")
    s.add_argument("--source-count", type=int, default=S, help="procedural training scenes")
    s.add_argument("--sources", default=S, help="directory of rgb/ + depth/ PNG pairs instead of procedural scenes")
    s.add_argument("--size", default=S, help="HxW resolution, e.g. 240x320")
    s.add_argument("--a-range", default=S)
    s.add_argument("--beta-range", default=S)
    s.add_argument("--d-max", type=float, default=S)

    t = sub.add_parser("train", parents=[common], help="train on a synthesized dataset")
    t.add_argument("--data", default=S, help="dataset root written by synth")
    t.add_argument("--lr", type=float, default=S)
    t.add_argument("--alpha", type=float, default=S, help="transmission loss weight")
    t.add_argument("--batch-size", type=int, default=S)
    t.add_argument("--epochs", type=int, default=S)
    t.add_argument("--crop", type=int, default=S, help="random crop size; 0 trains on full frames")
    t.add_argument("--patience", type=int, default=S)
    t.add_argument("--clip-norm", type=float, default=S)
    t.add_argument("--no-figures", action="store_true", default=S)

    d = sub.add_parser("dehaze", parents=[common], help="dehaze images with trained weights")
    d.add_argument("inputs", nargs="+", help="image files or directories")
    d.add_argument("--weights", default=S)
    d.add_argument("--transmission", action="store_true", default=S, help="also write transmission maps")

    e = sub.add_parser("eval", parents=[common], help="run an evaluation suite")
    e.add_argument("--weights", default=S)
    e.add_argument("--suite", default=S, help=", ".join(E.SUITES[:-1]))
    e.add_argument("--model", default=S, choices=["network", "identity", "oracle"],
                   help="network (needs --weights) or a reference dehazer")
    e.add_argument("--data", default=S, help="split directory for STANDARD (default: built-in scenes)")
    e.add_argument("--image-count", type=int, default=S)
    e.add_argument("--size", default=S)
    e.add_argument("--no-figures", action="store_true", default=S)

    w = sub.add_parser("sweep-alpha", parents=[common], help="validation MSE across loss weights")
    w.add_argument("--data", default=S)
    w.add_argument("--alphas", default=S)
    w.add_argument("--seeds", default=S, help="comma-separated training seeds (default: --seed)")
    w.add_argument("--epochs", type=int, default=S)
    w.add_argument("--lr", type=float, default=S)
    w.add_argument("--batch-size", type=int, default=S)
    w.add_argument("--crop", type=int, default=S)
    w.add_argument("--no-figures", action="store_true", default=S)
    return p


def _converters(parser: argparse.ArgumentParser, command: str) -> dict:
    """``dest -> type`` for the options of ``command`` (so config values get flag-equivalent checks)."""
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {act.dest: act.type for act in sub.choices[command]._actions if act.type is not None}


def _coerce(key, value, conv):
    if value is None or conv is None:
        return value
    try:
        if conv is int and (isinstance(value, bool) or (isinstance(value, float) and not value.is_integer())):
            raise ValueError(value)
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: bad value {value!r}") from exc


def resolve(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    conv = _converters(parser, args["command"])
    merged = {"verbose": False, "seed": None, **DEFAULTS}
    cfg_path = args.get("config")
    if cfg_path:
        try:
            cfg = json.loads(Path(cfg_path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {cfg_path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        section = cfg.get(args["command"], {})
        for layer in (cfg, section):
            for k, v in layer.items():
                key = k.replace("-", "_")
                if isinstance(v, dict) and key in ("synth", "train", "dehaze", "eval", "sweep_alpha"):
                    continue
                if key not in merged:
                    raise ConfigError(f"unknown config key {k!r}")
                merged[key] = _coerce(k, v, conv.get(key))
    merged.update(args)
    ns = argparse.Namespace(**merged)
    if ns.command in STOCHASTIC and ns.seed is None:
        raise ConfigError(f"{ns.command} needs an explicit --seed (flag or config)")
    if ns.seed is None:
        ns.seed = 0
    return ns


def _size(text) -> tuple[int, int]:
    h, w = _pair(text, int, "x")
    if h < 1 or w < 1:
        raise ConfigError(f"bad size {text!r}")
    return h, w


# -- subcommands ---------------------------------------------------------------


def cmd_synth(a) -> int:
    out = Path(a.out)
    size = _size(a.size)
    a_range, beta_range = _pair(a.a_range), _pair(a.beta_range)
    if a.sources:
        train_src = scenes.load_sources(a.sources)
        test_src = train_src
    else:
        train_src = scenes.bundled_sources(a.source_count, *size)
        test_src = scenes.eval_sources(*size, count=max(a.test_count, 1))
    config = {"size": list(size), "a_range": list(a_range), "beta_range": list(beta_range),
              "d_max": a.d_max, "depth_normalization": "per-image min-max to [0, d_max]",
              "seed": a.seed, "sources": a.sources or "procedural"}
    splits = {
        "train": D.generate_dataset(train_src, a.count, a_range, beta_range, a.seed, size, a.d_max),
        "val": D.generate_dataset(train_src, a.val_count, a_range, beta_range, a.seed + 1_000_003, size, a.d_max),
    }
    test = [D.synthesize(s, HazeParams(E.STANDARD_A, E.STANDARD_BETA), size, a.d_max, index=i, seed=a.seed)
            for i, s in enumerate(test_src[:a.test_count])]
    splits["test"] = test
    for name, triples in splits.items():
        cfg = dict(config, split=name)
        if name == "test":
            cfg.update(a_range=[E.STANDARD_A, E.STANDARD_A], beta_range=[E.STANDARD_BETA, E.STANDARD_BETA])
        path = D.write_split(out / name, triples, cfg, a.d_max)
        print(f"{name}\t{len(triples)}\t{path}\tsha256={D.manifest_hash(path.read_text())[:16]}")
    return 0


def _load_split(root, name):
    path = Path(root) / name
    if not (path / D.MANIFEST_NAME).exists():
        raise DataError(f"missing split {path} (run `ldtnet synth` first)")
    return D.read_split(path)


def _train_config(a, alpha=None, seed=None):
    from .training import TrainConfig

    return TrainConfig(lr=a.lr, alpha=a.alpha if alpha is None else alpha, batch_size=a.batch_size,
                       epochs=a.epochs, seed=a.seed if seed is None else seed,
                       crop=a.crop or None, clip_norm=a.clip_norm, patience=a.patience)


def cmd_train(a) -> int:
    from . import optim
    from .plotting import plot_training_log
    from .training import format_log, train

    if not a.data:
        raise ConfigError("train needs --data (a dataset root written by synth)")
    train_set, val_set = _load_split(a.data, "train"), _load_split(a.data, "val")
    cfg = _train_config(a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    weights, state_path, log_path = out / "weights.ldtn", out / "adam.ldtn", out / "train_log.tsv"
    notes = [CROP_NOTE] if cfg.crop else []
    rows = []

    def on_improve(params, state, epoch):
        M.save_params(params, weights)
        optim.save_state(state, state_path, list(params.learnable()))

    def on_epoch(row):
        rows.append(row)
        log_path.write_text(format_log(rows, cfg, notes))
        print(f"epoch {row['epoch']}\tloss {row['train_loss']:.6f}\tval_mse {row['val_mse']:.6f}"
              + ("\tbest" if row["best"] else ""), file=sys.stderr, flush=True)

    result = train(train_set, val_set, cfg, on_improve=on_improve, on_epoch=on_epoch)
    if not val_set:
        on_improve(result.params, result.state, len(rows))
    M.save_params(result.final_params, out / "last.ldtn")
    if not a.no_figures and rows:
        plot_training_log(rows, out / "train_log.png")
    print(f"best_epoch\t{result.best_epoch}\tval_mse\t{result.best_val_mse!r}\tweights\t{weights}")
    return 0


def _need_weights(a):
    if not a.weights:
        raise ConfigError("--weights is required")
    return M.load_params(a.weights)


def _image_paths(inputs):
    exts = {".png", ".ppm", ".pgm"}
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            yield from sorted(q for q in p.iterdir() if q.suffix.lower() in exts)
        elif p.exists():
            yield p
        else:
            raise DataError(f"input not found: {p}")


def cmd_dehaze(a) -> int:
    params = _need_weights(a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for path in _image_paths(a.inputs):
        img = load_image(path)
        if img.shape[3] != 3:
            raise DataError(f"{path}: dehazing needs an RGB image")
        dehazed, trans = M.dehaze(params, img)
        save_image(dehazed, out / f"{path.stem}_dehazed.png", 8)
        if a.transmission:
            save_image(trans, out / f"{path.stem}_trans.png", 16)
        print(f"{path}\t{out / (path.stem + '_dehazed.png')}")
        n += 1
    if n == 0:
        raise DataError("no input images found")
    return 0


def _dehazer(a):
    if a.model == "identity":
        return E.identity_dehazer
    if a.model == "oracle":
        return E.inversion_oracle
    return E.network_dehazer(_need_weights(a))


def cmd_eval(a) -> int:
    config = E.EvalSuiteConfig(suite=a.suite, image_count=a.image_count, seed=a.seed)
    if config.suite == "ALPHA_SWEEP":
        raise ConfigError("use `ldtnet sweep-alpha` for the alpha sweep")
    dehazer = _dehazer(a)
    if config.suite == "STANDARD" and a.data:
        report = E.run_standard_eval(dehazer, a.data, config)
    else:
        report = E.run_suite(dehazer, scenes.eval_sources(*_size(a.size), count=a.image_count), config)
    paths = E.write_report(report, a.out, figure=not a.no_figures)
    sys.stdout.write(E.summary_table(report))
    print(f"report\t{paths['tsv']}")
    return 0


def cmd_sweep_alpha(a) -> int:
    from .plotting import plot_alpha_sweep
    from .training import train

    if not a.data:
        raise ConfigError("sweep-alpha needs --data (a dataset root written by synth)")
    train_set, val_set = _load_split(a.data, "train"), _load_split(a.data, "val")
    if not val_set:
        raise DataError("sweep-alpha needs a non-empty validation split")
    alphas = _floats(a.alphas)
    seeds = [int(s) for s in _floats(a.seeds)] if a.seeds is not None else [a.seed]
    E.EvalSuiteConfig("ALPHA_SWEEP", alpha_values=alphas)

    def train_fn(alpha, seed):
        print(f"alpha {alpha:g} seed {seed}", file=sys.stderr, flush=True)
        return train(train_set, val_set, _train_config(a, alpha, seed)).params

    report = E.run_alpha_sweep(train_fn, val_set, alphas, seeds)
    report.config = asdict(_train_config(a))
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"alpha_sweep_seed{'-'.join(map(str, seeds))}"
    (out / f"{stem}.tsv").write_text(E.sweep_text(report))
    (out / f"{stem}.txt").write_text(E.sweep_summary(report))
    if not a.no_figures:
        plot_alpha_sweep(report, out / f"{stem}.png")
    sys.stdout.write(E.sweep_summary(report))
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "dehaze": cmd_dehaze, "eval": cmd_eval,
            "sweep-alpha": cmd_sweep_alpha}


def main(argv=None) -> int:
    try:
        a = resolve(argv)
        logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        with thread_limit(a.threads):
            return COMMANDS[a.command](a)
    except LdtNetError as exc:
        msg = " ".join(str(exc).split())
        print(f"ldtnet: error {exc.code}: {msg}", file=sys.stderr)
        return exc.exit_status
    except (OSError, np.linalg.LinAlgError) as exc:
        print(f"ldtnet: error E_DATA: {' '.join(str(exc).split())}", file=sys.stderr)
        return DataError.exit_status


if __name__ == "__main__":
    sys.exit(main())
