"""Procedural RGB + depth scenes used as haze-free sources.

Each scene is a background depth field (a tilted ground ramp, a radial bowl
or a multi-octave value-noise composite) with a handful of textured
foreground objects pasted in front of it. Colour and depth are generated
together so occluding objects are both nearer and differently textured,
which is the structure real RGB-D captures have.

Scenes are a pure function of ``(seed, index)``, so a "bundled set" is just a
seed and a count.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .haze import resize

TRAIN_SOURCE_SEED = 1_000
EVAL_SOURCE_SEED = 9_000
EVAL_SOURCE_COUNT = 21


@dataclass(frozen=True)
class Source:
    source_id: str
    clear: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W), >= 0, arbitrary units


def value_noise(rng: np.random.Generator, h: int, w: int, octaves: int = 4, base: int = 3) -> np.ndarray:
    """Sum of bilinearly upsampled random lattices with halving amplitude, scaled to [0, 1]."""
    out = np.zeros((h, w))
    amp = 1.0
    for o in range(octaves):
        cells = base * 2 ** o
        grid = rng.random((cells + 1, cells + 1))
        out += amp * resize(grid, h, w)
        amp *= 0.5
    out -= out.min()
    peak = out.max()
    return out / peak if peak > 0 else out


def _background_depth(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    kind = rng.integers(3)
    if kind == 0:
        # ground plane receding towards the top edge
        tilt = rng.uniform(-0.3, 0.3)
        d = 1.0 / (0.15 + np.clip(yy + tilt * (xx - 0.5), 0, None))
    elif kind == 1:
        cy, cx = rng.uniform(0.2, 0.8, size=2) * (h / max(h, w), w / max(h, w))
        d = 1.0 + 4.0 * np.hypot(yy - cy, xx - cx)
    else:
        d = 1.0 + 6.0 * value_noise(rng, h, w, octaves=3, base=2)
    return d + 0.3 * value_noise(rng, h, w)


def _texture(rng, h, w):
    kind = rng.integers(3)
    if kind == 0:
        return value_noise(rng, h, w, octaves=5, base=4)
    yy, xx = np.mgrid[0:h, 0:w]
    period = rng.uniform(3, 12)
    if kind == 1:
        angle = rng.uniform(0, np.pi)
        return 0.5 + 0.5 * np.sin((xx * np.cos(angle) + yy * np.sin(angle)) * 2 * np.pi / period)
    return (((yy // period) + (xx // period)) % 2).astype(float)


def procedural_scene(seed: int, index: int, height: int, width: int) -> Source:
    rng = np.random.default_rng([seed, index])
    depth = _background_depth(rng, height, width)
    near, far = depth.min(), depth.max()

    c_near, c_far = rng.random(3), rng.random(3)
    blend = ((depth - near) / (far - near + 1e-12))[..., None]
    clear = (1 - blend) * c_near + blend * c_far
    clear *= 0.7 + 0.3 * _texture(rng, height, width)[..., None]

    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(rng.integers(3, 8)):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry, rx = rng.uniform(0.08, 0.3) * height, rng.uniform(0.08, 0.3) * width
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        obj_depth = rng.uniform(near, near + 0.6 * (far - near))
        mask &= depth > obj_depth
        tex = 0.6 + 0.4 * _texture(rng, height, width)
        depth = np.where(mask, obj_depth + 0.05 * value_noise(rng, height, width), depth)
        clear = np.where(mask[..., None], rng.random(3) * tex[..., None], clear)

    return Source(
        source_id=f"proc-{seed}-{index:04d}",
        clear=np.clip(clear, 0.0, 1.0).astype(np.float32),
        depth=depth.astype(np.float32),
    )


def bundled_sources(count: int, height: int, width: int, seed: int = TRAIN_SOURCE_SEED) -> list[Source]:
    return [procedural_scene(seed, i, height, width) for i in range(count)]


def eval_sources(height: int, width: int, count: int = EVAL_SOURCE_COUNT) -> list[Source]:
    """Held-out scenes; drawn from a seed disjoint from the training sources."""
    return bundled_sources(count, height, width, seed=EVAL_SOURCE_SEED)


def load_sources(directory) -> list[Source]:
    """Read user-supplied pairs ``<dir>/rgb/<name>.png`` + ``<dir>/depth/<name>.png``.

    Depth PNGs are read as normalized values; only relative depth matters
    because depth is min-max normalized before haze synthesis.
    """
    from .images import load_image

    directory = Path(directory)
    rgb_dir, depth_dir = directory / "rgb", directory / "depth"
    if not rgb_dir.is_dir() or not depth_dir.is_dir():
        raise DataError(f"{directory} must contain rgb/ and depth/ subdirectories")
    sources = []
    for rgb_path in sorted(rgb_dir.iterdir()):
        if rgb_path.suffix.lower() not in (".png", ".ppm"):
            continue
        matches = sorted(depth_dir.glob(rgb_path.stem + ".*"))
        if not matches:
            raise DataError(f"no depth map for {rgb_path.name}")
        clear = load_image(rgb_path)[0]
        depth = load_image(matches[0])[0, ..., 0]
        if clear.shape[2] != 3:
            raise DataError(f"{rgb_path} is not an RGB image")
        if depth.shape != clear.shape[:2]:
            depth = resize(depth, *clear.shape[:2])
        sources.append(Source(rgb_path.stem, clear, depth))
    if not sources:
        raise DataError(f"no source images found under {rgb_dir}")
    return sources
