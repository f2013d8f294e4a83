"""Haze triples, dataset generation, and the on-disk dataset layout.

A split directory holds::

    manifest.tsv
    clear/<index>.png   8-bit RGB
    hazy/<index>.png    8-bit RGB
    trans/<index>.png   16-bit grayscale
    depth/<index>.png   16-bit grayscale, depth / d_max

``manifest.tsv`` is tab-separated. Line 1 is ``#ldtnet-manifest<TAB>version=1``,
line 2 is ``#config<TAB><json>`` with the generation settings, line 3 is the
column header ``index source_id clear hazy transmission depth A beta seed``,
and each following line describes one triple. ``A`` and ``beta`` are written
with full float precision.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError
from .haze import D_MAX, HazeParams, apply_haze, normalize_depth, resize, transmission_from_depth
from .images import load_image, save_image
from .scenes import Source

MANIFEST_NAME = "manifest.tsv"
MANIFEST_VERSION = 1
MANIFEST_FIELDS = ("index", "source_id", "clear", "hazy", "transmission", "depth", "A", "beta", "seed")
A_RANGE = (0.7, 1.0)
BETA_RANGE = (0.5, 1.5)
DEFAULT_SIZE = (96, 128)


@dataclass(frozen=True)
class HazeTriple:
    clear: np.ndarray  # (H, W, 3)
    transmission: np.ndarray  # (H, W, 1)
    hazy: np.ndarray  # (H, W, 3)
    params: HazeParams
    source_id: str = ""
    depth: np.ndarray | None = field(default=None, repr=False)
    index: int = 0
    seed: int = 0


def synthesize(source: Source, params: HazeParams, size=None, d_max: float = D_MAX,
               index: int = 0, seed: int = 0) -> HazeTriple:
    """Build one triple from a clear image and its depth map."""
    clear, depth = source.clear, source.depth
    if size is not None and clear.shape[:2] != tuple(size):
        clear = np.clip(resize(clear, *size), 0.0, 1.0)
        depth = resize(depth, *size)
    depth = normalize_depth(depth, d_max)
    t = transmission_from_depth(depth, params.beta)[..., None]
    hazy = apply_haze(clear, t, params.A)
    return HazeTriple(clear.astype(np.float32), t, hazy, params, source.source_id, depth, index, seed)


def _uniform_open(rng: np.random.Generator, lo: float, hi: float) -> float:
    while True:
        v = float(rng.uniform(lo, hi))
        if lo < v < hi:
            return v


def _check_range(name, rng_, lo_bound, hi_bound, hi_closed):
    lo, hi = rng_
    ok = lo_bound <= lo < hi and (hi <= hi_bound if hi_closed else hi < hi_bound)
    if not ok:
        raise DomainError(f"{name} range {rng_} is outside its valid domain")


def generate_dataset(sources: list[Source], count: int, a_range=A_RANGE, beta_range=BETA_RANGE,
                     seed: int = 0, size=DEFAULT_SIZE, d_max: float = D_MAX) -> list[HazeTriple]:
    """Sample ``count`` triples, cycling through ``sources``.

    Triple ``i`` draws ``A`` and ``beta`` uniformly from the open ranges using
    its own generator seeded with ``(seed, i)``, so the result does not
    depend on generation order.
    """
    if not sources:
        raise DataError("generate_dataset needs at least one source image")
    _check_range("A", a_range, 0.0, 1.0, hi_closed=True)
    _check_range("beta", beta_range, 0.0, np.inf, hi_closed=False)
    triples = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        params = HazeParams(_uniform_open(rng, *a_range), _uniform_open(rng, *beta_range))
        triples.append(synthesize(sources[i % len(sources)], params, size, d_max, index=i, seed=seed))
    return triples


# -- disk layout ---------------------------------------------------------------


def manifest_text(triples: list[HazeTriple], config: dict) -> str:
    buf = io.StringIO()
    buf.write(f"#ldtnet-manifest\tversion={MANIFEST_VERSION}\n")
    buf.write("#config\t" + json.dumps(config, sort_keys=True) + "\n")
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(MANIFEST_FIELDS)
    for tr in triples:
        stem = f"{tr.index:05d}.png"
        w.writerow([tr.index, tr.source_id, f"clear/{stem}", f"hazy/{stem}", f"trans/{stem}",
                    f"depth/{stem}", repr(tr.params.A), repr(tr.params.beta), tr.seed])
    return buf.getvalue()


def manifest_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def write_split(directory, triples: list[HazeTriple], config: dict, d_max: float = D_MAX) -> Path:
    """Write images and the manifest for one split; returns the manifest path."""
    directory = Path(directory)
    for sub in ("clear", "hazy", "trans", "depth"):
        (directory / sub).mkdir(parents=True, exist_ok=True)
    for tr in triples:
        stem = f"{tr.index:05d}.png"
        save_image(tr.clear, directory / "clear" / stem, 8)
        save_image(tr.hazy, directory / "hazy" / stem, 8)
        save_image(tr.transmission, directory / "trans" / stem, 16)
        depth = tr.depth if tr.depth is not None else np.zeros(tr.clear.shape[:2], np.float32)
        save_image(np.clip(depth / d_max, 0.0, 1.0), directory / "depth" / stem, 16)
    path = directory / MANIFEST_NAME
    path.write_text(manifest_text(triples, config))
    return path


def read_manifest(directory) -> tuple[dict, list[dict]]:
    path = Path(directory) / MANIFEST_NAME
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise DataError(f"no dataset manifest at {path}") from exc
    if len(lines) < 3 or not lines[0].startswith("#ldtnet-manifest\t"):
        raise DataError(f"{path}: not an ldtnet manifest")
    version = lines[0].split("\t", 1)[1]
    if version != f"version={MANIFEST_VERSION}":
        raise DataError(f"{path}: unsupported manifest {version}")
    if not lines[1].startswith("#config\t"):
        raise DataError(f"{path}: missing config line")
    try:
        config = json.loads(lines[1].split("\t", 1)[1])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: bad config line: {exc}") from exc
    reader = csv.reader(lines[2:], delimiter="\t")
    header = next(reader)
    if tuple(header) != MANIFEST_FIELDS:
        raise DataError(f"{path}: unexpected columns {header}")
    rows = [dict(zip(MANIFEST_FIELDS, r)) for r in reader if r]
    for r in rows:
        if len(r) != len(MANIFEST_FIELDS):
            raise DataError(f"{path}: short manifest row {r}")
    return config, rows


def read_split(directory) -> list[HazeTriple]:
    """Load every triple listed in a split's manifest."""
    directory = Path(directory)
    config, rows = read_manifest(directory)
    d_max = float(config.get("d_max", D_MAX))
    triples = []
    for r in rows:
        try:
            params = HazeParams(float(r["A"]), float(r["beta"]))
            triples.append(HazeTriple(
                clear=load_image(directory / r["clear"])[0],
                transmission=load_image(directory / r["transmission"])[0],
                hazy=load_image(directory / r["hazy"])[0],
                params=params,
                source_id=r["source_id"],
                depth=load_image(directory / r["depth"])[0, ..., 0] * d_max,
                index=int(r["index"]),
                seed=int(r["seed"]),
            ))
        except (ValueError, KeyError) as exc:
            raise DataError(f"{directory}: bad manifest row {r}: {exc}") from exc
    return triples
