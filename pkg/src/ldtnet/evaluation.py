"""Evaluation suites: standard synthetic test, airlight (ARE), scattering
coefficient (CRE), scale (SRE) and noise (NRE) robustness, and the
loss-weight sweep.

A *dehazer* is any callable ``f(hazy, triple) -> dehazed`` on ``(H, W, 3)``
arrays. The triple is passed so reference models (identity, inversion with
the true transmission) fit the same interface as the network, which ignores
it.

Report file layout (tab-separated)::

    #ldtnet-eval<TAB>version=1
    #meta<TAB>{json: suite, seed, config, config_hash, notes}
    [records]
    source_id  cell  perturbation  mse  psnr  ssim  error
    ...
    [aggregates]
    cell  n  mean_mse  mean_psnr  mean_ssim
    ...

Floats are written with ``repr`` so aggregates recompute bit-exactly from
the records. Aggregates are ``math.fsum`` means over records without an error.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import model as M
from .dataset import HazeTriple, read_manifest, synthesize
from .errors import ConfigError, DataError, LdtNetError, NumericError
from .haze import NOISE_KINDS, SCALE_FACTORS, HazeParams, add_noise, invert_haze, rescale_image
from .images import load_image
from .metrics import mse, psnr_from_mse, ssim
from .scenes import Source

Dehazer = Callable[[np.ndarray, HazeTriple], np.ndarray]

SUITES = ("STANDARD", "ARE", "CRE", "SRE", "NRE", "ALPHA_SWEEP")
STANDARD_A = 0.85
STANDARD_BETA = 1.0
AUX_REMOVED = "auxiliary task removed"
REPORT_VERSION = 1
RECORD_FIELDS = ("source_id", "cell", "perturbation", "mse", "psnr", "ssim", "error")
AGGREGATE_FIELDS = ("cell", "n", "mean_mse", "mean_psnr", "mean_ssim")
GRID_NOTE = ("ARE/CRE grids: 10 evenly spaced interval midpoints per source; "
             "21 sources x 10 values is an inferred decomposition of the 210-image protocol")


def interval_grid(lo: float, hi: float, n: int = 10) -> list[float]:
    """``n`` evenly spaced midpoints of the open interval ``(lo, hi)``."""
    return [lo + (hi - lo) * (k + 0.5) / n for k in range(n)]


@dataclass
class EvalSuiteConfig:
    suite: str = "STANDARD"
    a_values: list[float] = field(default_factory=lambda: interval_grid(0.7, 1.0))
    beta_values: list[float] = field(default_factory=lambda: interval_grid(0.5, 1.5))
    scale_factors: list[float] = field(default_factory=lambda: list(SCALE_FACTORS))
    noise_specs: list[tuple[str, float]] = field(
        default_factory=lambda: [("gaussian", 0.02), ("poisson", 0.01), ("saltpepper", 0.02)])
    alpha_values: list[float] = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    image_count: int = 21
    seed: int = 0
    A: float = STANDARD_A
    beta: float = STANDARD_BETA

    def __post_init__(self):
        self.suite = self.suite.upper()
        if self.suite not in SUITES:
            raise ConfigError(f"unknown suite {self.suite!r}; choose from {', '.join(SUITES)}")
        self.noise_specs = [tuple(s) for s in self.noise_specs]
        lists = {"ARE": self.a_values, "CRE": self.beta_values, "SRE": self.scale_factors,
                 "NRE": self.noise_specs, "ALPHA_SWEEP": self.alpha_values}
        if self.suite in lists and not lists[self.suite]:
            raise ConfigError(f"{self.suite} needs a non-empty parameter list")
        try:
            for a in self.a_values:
                HazeParams(a, self.beta)
            for b in self.beta_values:
                HazeParams(self.A, b)
        except LdtNetError as exc:
            raise ConfigError(str(exc)) from exc
        for kind, _ in self.noise_specs:
            if kind not in NOISE_KINDS:
                raise ConfigError(f"unknown noise kind {kind!r}")
        if any(not 0 <= a <= 1 for a in self.alpha_values):
            raise ConfigError("alpha values must lie in [0, 1]")
        if self.image_count < 1:
            raise ConfigError("image_count must be >= 1")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:10]


@dataclass(frozen=True)
class EvalRecord:
    source_id: str
    cell: str
    perturbation: str
    mse: float = math.nan
    psnr: float = math.nan
    ssim: float = math.nan
    error: str = ""


@dataclass(frozen=True)
class CellAggregate:
    cell: str
    n: int
    mean_mse: float
    mean_psnr: float
    mean_ssim: float


@dataclass
class EvalReport:
    suite: str
    seed: int
    records: list[EvalRecord]
    aggregates: list[CellAggregate]
    config: dict = field(default_factory=dict)
    config_hash: str = ""
    notes: list[str] = field(default_factory=list)

    def cell(self, name: str) -> CellAggregate:
        for a in self.aggregates:
            if a.cell == name:
                return a
        raise KeyError(name)

    def mean_psnr(self) -> float:
        ok = [r.psnr for r in self.records if not r.error]
        return math.fsum(ok) / len(ok) if ok else math.nan

    def mean_ssim(self) -> float:
        ok = [r.ssim for r in self.records if not r.error]
        return math.fsum(ok) / len(ok) if ok else math.nan

    def file_stem(self) -> str:
        return f"{self.suite.lower()}_seed{self.seed}_{self.config_hash}"


def aggregate(records: Iterable[EvalRecord]) -> list[CellAggregate]:
    """Per-cell means in first-appearance order; errored records are excluded."""
    cells: dict[str, list[EvalRecord]] = {}
    for r in records:
        cells.setdefault(r.cell, [])
        if not r.error:
            cells[r.cell].append(r)
    out = []
    for name, rs in cells.items():
        n = len(rs)

        def mean(k):
            return math.fsum(getattr(r, k) for r in rs) / n if n else math.nan

        out.append(CellAggregate(name, n, mean("mse"), mean("psnr"), mean("ssim")))
    return out


# -- reference dehazers --------------------------------------------------------


def identity_dehazer(hazy: np.ndarray, triple: HazeTriple) -> np.ndarray:
    return hazy


def inversion_oracle(hazy: np.ndarray, triple: HazeTriple) -> np.ndarray:
    """Invert the scattering model with the true transmission and airlight."""
    return invert_haze(hazy, triple.transmission, triple.params.A)


def network_dehazer(params: M.LdtNetParams) -> Dehazer:
    def run(hazy, triple):
        return M.dehaze(params, hazy)[0]

    return run


# -- scoring -------------------------------------------------------------------


def score_one(dehazer: Dehazer, hazy: np.ndarray, triple: HazeTriple, cell: str,
              perturbation: str) -> EvalRecord:
    try:
        out = np.asarray(dehazer(hazy, triple))
        if out.shape != triple.clear.shape:
            raise DataError(f"dehazer returned shape {out.shape}, expected {triple.clear.shape}")
        if not np.all(np.isfinite(out)):
            raise NumericError("dehazer produced non-finite values")
        err = mse(out, triple.clear)
        return EvalRecord(triple.source_id, cell, perturbation, err, psnr_from_mse(err), ssim(out, triple.clear))
    except LdtNetError as exc:
        return EvalRecord(triple.source_id, cell, perturbation, error=f"{exc.code}: {exc}")


def _report(config: EvalSuiteConfig, records: list[EvalRecord], notes=()) -> EvalReport:
    return EvalReport(config.suite, config.seed, records, aggregate(records), asdict(config),
                      config.config_hash(), list(notes))


def _lazy_split(directory) -> list:
    """Rows of a split manifest as callables that load the triple (or raise DataError)."""
    directory = Path(directory)
    _, rows = read_manifest(directory)

    def loader(r):
        def load():
            return HazeTriple(
                clear=load_image(directory / r["clear"])[0],
                transmission=load_image(directory / r["transmission"])[0],
                hazy=load_image(directory / r["hazy"])[0],
                params=HazeParams(float(r["A"]), float(r["beta"])),
                source_id=r["source_id"], index=int(r["index"]),
            )
        return r["source_id"], load

    return [loader(r) for r in rows]


def standard_triples(sources: list[Source], config: EvalSuiteConfig) -> list[HazeTriple]:
    chosen = sources[:config.image_count]
    return [synthesize(s, HazeParams(config.A, config.beta), index=i) for i, s in enumerate(chosen)]


def run_standard_eval(dehazer: Dehazer, dataset, config: EvalSuiteConfig | None = None) -> EvalReport:
    """Score every triple of ``dataset`` (a list of triples or a split directory).

    Unreadable files produce an errored record instead of aborting the suite.
    """
    config = config or EvalSuiteConfig("STANDARD")
    cell = f"A={config.A:g},beta={config.beta:g}"
    records = []
    if isinstance(dataset, (str, Path)):
        for source_id, load in _lazy_split(dataset):
            try:
                tr = load()
            except LdtNetError as exc:
                records.append(EvalRecord(source_id, cell, "none", error=f"{exc.code}: {exc}"))
                continue
            records.append(score_one(dehazer, tr.hazy, tr, cell, "none"))
    else:
        for tr in dataset:
            records.append(score_one(dehazer, tr.hazy, tr, cell, "none"))
    return _report(config, records)


def run_are(dehazer: Dehazer, sources: list[Source], config: EvalSuiteConfig) -> EvalReport:
    """Fixed beta, airlight swept over ``config.a_values``; one cell per A."""
    records = []
    for a in config.a_values:
        cell = f"A={a:.4f}"
        for i, s in enumerate(sources[:config.image_count]):
            tr = synthesize(s, HazeParams(a, config.beta), index=i)
            records.append(score_one(dehazer, tr.hazy, tr, cell, "none"))
    return _report(config, records, [GRID_NOTE])


def run_cre(dehazer: Dehazer, sources: list[Source], config: EvalSuiteConfig) -> EvalReport:
    """Fixed airlight, beta swept over ``config.beta_values``; one cell per beta."""
    records = []
    for b in config.beta_values:
        cell = f"beta={b:.4f}"
        for i, s in enumerate(sources[:config.image_count]):
            tr = synthesize(s, HazeParams(config.A, b), index=i)
            records.append(score_one(dehazer, tr.hazy, tr, cell, "none"))
    return _report(config, records, [GRID_NOTE])


def run_sre(dehazer: Dehazer, sources: list[Source], config: EvalSuiteConfig) -> EvalReport:
    """Sources rescaled by each factor before haze synthesis at the standard A and beta."""
    records = []
    for f in config.scale_factors:
        cell = f"scale={f:g}"
        for i, s in enumerate(sources[:config.image_count]):
            scaled = Source(s.source_id, np.clip(rescale_image(s.clear, f), 0.0, 1.0), rescale_image(s.depth, f))
            tr = synthesize(scaled, HazeParams(config.A, config.beta), index=i)
            records.append(score_one(dehazer, tr.hazy, tr, cell, "none"))
    return _report(config, records)


def run_nre(dehazer: Dehazer, sources: list[Source], config: EvalSuiteConfig) -> EvalReport:
    """Noise added to the hazy input (standard A and beta); one cell per noise setting."""
    records = []
    for k, (kind, level) in enumerate(config.noise_specs):
        cell = f"{kind}={level:g}"
        for i, s in enumerate(sources[:config.image_count]):
            tr = synthesize(s, HazeParams(config.A, config.beta), index=i)
            noisy = add_noise(tr.hazy, kind, level, seed=_noise_seed(config.seed, k, i))
            records.append(score_one(dehazer, noisy, tr, cell, f"{kind}:{level:g}"))
    return _report(config, records)


def _noise_seed(seed: int, spec_index: int, image_index: int) -> int:
    return int(np.random.SeedSequence([seed, spec_index, image_index]).generate_state(1)[0])


def run_suite(dehazer: Dehazer, sources: list[Source], config: EvalSuiteConfig) -> EvalReport:
    runners = {
        "STANDARD": lambda: run_standard_eval(dehazer, standard_triples(sources, config), config),
        "ARE": lambda: run_are(dehazer, sources, config),
        "CRE": lambda: run_cre(dehazer, sources, config),
        "SRE": lambda: run_sre(dehazer, sources, config),
        "NRE": lambda: run_nre(dehazer, sources, config),
    }
    if config.suite not in runners:
        raise ConfigError(f"suite {config.suite} is not an image-scoring suite")
    return runners[config.suite]()


# -- serialization -------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def report_text(report: EvalReport) -> str:
    buf = io.StringIO()
    meta = {"suite": report.suite, "seed": report.seed, "config": report.config,
            "config_hash": report.config_hash, "notes": report.notes}
    buf.write(f"#ldtnet-eval\tversion={REPORT_VERSION}\n")
    buf.write("#meta\t" + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    buf.write("[records]\n")
    w.writerow(RECORD_FIELDS)
    for r in report.records:
        w.writerow([_fmt(getattr(r, k)) for k in RECORD_FIELDS])
    buf.write("[aggregates]\n")
    w.writerow(AGGREGATE_FIELDS)
    for a in report.aggregates:
        w.writerow([_fmt(getattr(a, k)) for k in AGGREGATE_FIELDS])
    return buf.getvalue()


def parse_report(text: str) -> EvalReport:
    lines = text.splitlines()
    if not lines or lines[0] != f"#ldtnet-eval\tversion={REPORT_VERSION}":
        raise DataError("not an ldtnet evaluation report")
    meta = json.loads(lines[1].split("\t", 1)[1])
    i_rec = lines.index("[records]")
    i_agg = lines.index("[aggregates]")
    rec_rows = list(csv.reader(lines[i_rec + 1:i_agg], delimiter="\t"))
    agg_rows = list(csv.reader(lines[i_agg + 1:], delimiter="\t"))
    if tuple(rec_rows[0]) != RECORD_FIELDS or tuple(agg_rows[0]) != AGGREGATE_FIELDS:
        raise DataError("report column headers do not match the documented layout")
    records = [EvalRecord(r[0], r[1], r[2], float(r[3]), float(r[4]), float(r[5]), r[6] if len(r) > 6 else "")
               for r in rec_rows[1:]]
    aggs = [CellAggregate(a[0], int(a[1]), float(a[2]), float(a[3]), float(a[4])) for a in agg_rows[1:]]
    return EvalReport(meta["suite"], meta["seed"], records, aggs, meta["config"], meta["config_hash"], meta["notes"])


def summary_table(report: EvalReport) -> str:
    width = max([len(a.cell) for a in report.aggregates] + [8])
    lines = [f"suite {report.suite}  seed {report.seed}  config {report.config_hash}",
             f"{'cell':<{width}}  {'n':>4}  {'PSNR (dB)':>10}  {'SSIM':>8}  {'MSE':>10}"]
    for a in report.aggregates:
        lines.append(f"{a.cell:<{width}}  {a.n:>4d}  {a.mean_psnr:>10.4f}  {a.mean_ssim:>8.4f}  {a.mean_mse:>10.6f}")
    lines.append(f"{'overall':<{width}}  {sum(a.n for a in report.aggregates):>4d}  "
                 f"{report.mean_psnr():>10.4f}  {report.mean_ssim():>8.4f}")
    failed = sum(1 for r in report.records if r.error)
    if failed:
        lines.append(f"{failed} record(s) failed; see the error column")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir, figure: bool = True) -> dict[str, Path]:
    """Write ``<stem>.tsv``, ``<stem>.txt`` and (optionally) ``<stem>.png``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = report.file_stem()
    paths = {"tsv": out_dir / f"{stem}.tsv", "txt": out_dir / f"{stem}.txt"}
    paths["tsv"].write_text(report_text(report))
    paths["txt"].write_text(summary_table(report))
    if figure:
        from .plotting import plot_eval_report

        paths["png"] = plot_eval_report(report, out_dir / f"{stem}.png")
    return paths


# -- loss-weight sweep ---------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    seed: int
    val_mse: float
    status: str = "ok"
    label: str = ""


@dataclass
class AlphaSweepReport:
    rows: list[SweepRow]
    seeds: list[int]
    config: dict = field(default_factory=dict)

    def mse(self, alpha: float, seed: int) -> float:
        for r in self.rows:
            if r.alpha == alpha and r.seed == seed:
                return r.val_mse
        raise KeyError((alpha, seed))

    def curve(self) -> list[tuple[float, float]]:
        """``(alpha, mean validation MSE over converged seeds)`` in sweep order."""
        out = []
        for a in dict.fromkeys(r.alpha for r in self.rows):
            vals = [r.val_mse for r in self.rows if r.alpha == a and r.status == "ok"]
            out.append((a, math.fsum(vals) / len(vals) if vals else math.nan))
        return out

    def paired_wins(self, better: float, worse: float) -> int:
        """Seeds on which ``mse(better) < mse(worse)``."""
        return sum(1 for s in self.seeds if self.mse(better, s) < self.mse(worse, s))


def run_alpha_sweep(train_fn: Callable[[float, int], M.LdtNetParams], val_set: list[HazeTriple],
                    alpha_values: Iterable[float], seeds: Iterable[int] = (0,)) -> AlphaSweepReport:
    """Train once per ``(alpha, seed)`` with ``train_fn`` and record validation MSE.

    Every alpha sees the same seeds, so differences isolate the loss weight.
    A diverging run is recorded with status ``diverged`` and the sweep
    continues.
    """
    from .training import validation_mse

    seeds = list(seeds)
    rows = []
    for a in alpha_values:
        label = AUX_REMOVED if a == 0 else ""
        for s in seeds:
            try:
                params = train_fn(a, s)
                val = validation_mse(params, val_set)
                status = "ok" if math.isfinite(val) else "diverged"
            except NumericError as exc:
                val, status = math.nan, f"diverged: {exc}"
            rows.append(SweepRow(float(a), s, val, status, label))
    return AlphaSweepReport(rows, seeds)


SWEEP_FIELDS = ("alpha", "seed", "val_mse", "status", "label")


def sweep_text(report: AlphaSweepReport) -> str:
    buf = io.StringIO()
    buf.write("#ldtnet-alpha-sweep\tversion=1\n")
    buf.write("#meta\t" + json.dumps({"seeds": report.seeds, "config": report.config}, sort_keys=True) + "\n")
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for r in report.rows:
        w.writerow([_fmt(getattr(r, k)) for k in SWEEP_FIELDS])
    return buf.getvalue()


def sweep_summary(report: AlphaSweepReport) -> str:
    lines = ["alpha   mean val MSE   note"]
    for a, m in report.curve():
        note = AUX_REMOVED if a == 0 else ""
        lines.append(f"{a:5.2f}   {m:12.6f}   {note}".rstrip())
    return "\n".join(lines) + "\n"
