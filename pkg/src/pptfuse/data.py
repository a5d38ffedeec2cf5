"""Corpus loading and small synthetic scenes for desk-scale runs."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .imageio import load_image, normalize, save_image, to_gray

IMAGE_SUFFIXES = (".png", ".pgm")


def fit_square(img: np.ndarray, size: int) -> np.ndarray:
    """Centre-crop to a square, then resize (bilinear) to ``size x size`` if needed."""
    h, w = img.shape[:2]
    s = min(h, w)
    y0, x0 = (h - s) // 2, (w - s) // 2
    crop = img[y0:y0 + s, x0:x0 + s]
    if s == size:
        return np.ascontiguousarray(crop)
    return np.asarray(Image.fromarray(crop).resize((size, size), Image.BILINEAR))


def list_images(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"corpus directory {d} does not exist")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_corpus(directory: str | Path, size: int) -> list[np.ndarray]:
    """Every PNG/PGM in ``directory`` (sorted by name) as a normalised ``[size, size]`` array."""
    return [normalize(fit_square(to_gray(load_image(p)), size)) for p in list_images(directory)]


# ---------------------------------------------------------------------------
# synthetic scenes


def _smooth_noise(rng: np.random.Generator, h: int, w: int, scale: int) -> np.ndarray:
    coarse = rng.standard_normal((h // scale + 2, w // scale + 2))
    img = Image.fromarray(coarse.astype(np.float32), mode="F").resize((w + 2 * scale, h + 2 * scale), Image.BICUBIC)
    return np.asarray(img)[scale:scale + h, scale:scale + w].astype(np.float64)


def _to_u8(x: np.ndarray) -> np.ndarray:
    lo, hi = np.percentile(x, [1, 99])
    return np.clip(np.round((x - lo) / max(hi - lo, 1e-9) * 255), 0, 255).astype(np.uint8)


def synthetic_scene(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Textured grayscale scene: multi-octave noise plus a few hard-edged shapes."""
    img = sum(_smooth_noise(rng, height, width, s) / (i + 1) for i, s in enumerate((32, 8, 2)))
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry, rx = rng.uniform(0.05, 0.2) * height, rng.uniform(0.05, 0.2) * width
        img += rng.uniform(-1.5, 1.5) * ((np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx))
    return _to_u8(img)


def synthetic_ir_visible_pair(rng: np.random.Generator, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """A dark background with warm blobs (infrared) and a textured view of the same layout (visible)."""
    visible = synthetic_scene(rng, height, width).astype(np.float64)
    yy, xx = np.mgrid[0:height, 0:width]
    ir = 0.25 * _smooth_noise(rng, height, width, 16)
    for _ in range(rng.integers(2, 4)):
        cy, cx = rng.uniform(0.2, 0.8) * height, rng.uniform(0.2, 0.8) * width
        sy, sx = rng.uniform(0.03, 0.1) * height, rng.uniform(0.02, 0.06) * width
        blob = np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))
        ir += 3.0 * blob
        visible -= 40.0 * blob
    ir_u8 = np.clip(np.round(40 + 60 * ir), 0, 255).astype(np.uint8)
    return ir_u8, np.clip(np.round(visible), 0, 255).astype(np.uint8)


def write_synthetic_corpus(directory: str | Path, count: int, height: int, width: int, seed: int = 0) -> list[Path]:
    """Write ``count`` synthetic training scenes as ``scene_NNN.png``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = [d / f"scene_{i:03d}.png" for i in range(count)]
    for p in paths:
        save_image(synthetic_scene(rng, height, width), p)
    return paths


def write_synthetic_pair(directory: str | Path, height: int, width: int, seed: int = 0) -> tuple[Path, Path]:
    """Write one infrared/visible pair as ``ir.png`` and ``vis.png``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ir, vis = synthetic_ir_visible_pair(np.random.default_rng(seed), height, width)
    save_image(ir, d / "ir.png")
    save_image(vis, d / "vis.png")
    return d / "ir.png", d / "vis.png"
