"""Siamese feature fusion, window tiling for arbitrary extents, RGB handling."""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .imageio import denormalize, normalize
from .model import NumericError, PptModel, decode
from .pyramid import FeatureStack
from .tensor import DimensionError, Tensor

PAD_VALUE = 128


class FusionStrategy(enum.Enum):
    AVERAGE = "average"
    MAX = "max"
    SOFTMAX = "softmax"

    @classmethod
    def parse(cls, name: "str | FusionStrategy") -> "FusionStrategy":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown fusion strategy {name!r}; choose from "
                             f"{', '.join(s.value for s in cls)}") from None


def softmax_pair_weights(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise two-way softmax weights ``(e^a, e^b) / (e^a + e^b)``."""
    m = np.maximum(a, b)
    ea = np.exp(a - m)
    eb = np.exp(b - m)
    s = ea + eb
    return ea / s, eb / s


def _fuse_arrays(a: np.ndarray, b: np.ndarray, strategy: FusionStrategy) -> np.ndarray:
    if strategy is FusionStrategy.AVERAGE:
        return (a + b) * a.dtype.type(0.5)
    if strategy is FusionStrategy.MAX:
        return np.maximum(a, b)
    wa, wb = softmax_pair_weights(a, b)
    # clip only absorbs last-ulp rounding; the combination is convex
    return np.clip(wa * a + wb * b, np.minimum(a, b), np.maximum(a, b))


def fuse_features(fa: FeatureStack, fb: FeatureStack, strategy: FusionStrategy | str) -> FeatureStack:
    strategy = FusionStrategy.parse(strategy)
    if fa.shape != fb.shape or fa.offsets != fb.offsets:
        raise DimensionError(f"feature stacks differ: {fa.shape} vs {fb.shape}")
    fused = _fuse_arrays(fa.features.data, fb.features.data, strategy)
    return FeatureStack(Tensor._wrap(fused.astype(fa.features.dtype, copy=False)), fa.offsets)


def fuse_pair(xa: Tensor, xb: Tensor, model: PptModel, strategy: FusionStrategy | str) -> Tensor:
    """Encode both normalised ``[S, S]`` inputs with one model, merge, decode."""
    if xa.shape != xb.shape:
        raise DimensionError(f"source extents differ: {xa.shape} vs {xb.shape}")
    return decode(fuse_features(model.encode(xa), model.encode(xb), strategy), model)


# ---------------------------------------------------------------------------
# tiling


@dataclass(frozen=True)
class TilePlan:
    height: int
    width: int
    window: int
    pad_value: int = PAD_VALUE

    @property
    def rows(self) -> int:
        return -(-self.height // self.window)

    @property
    def cols(self) -> int:
        return -(-self.width // self.window)

    @property
    def padded_shape(self) -> tuple[int, int]:
        return self.rows * self.window, self.cols * self.window

    @property
    def origins(self) -> list[tuple[int, int]]:
        s = self.window
        return [(r * s, c * s) for r in range(self.rows) for c in range(self.cols)]

    def pad(self, img: np.ndarray) -> np.ndarray:
        """Fill the right/bottom remainder with ``pad_value`` (raw 0..255 scale)."""
        if img.shape != (self.height, self.width):
            raise DimensionError(f"plan is for {self.height}x{self.width}, got {img.shape}")
        out = np.full(self.padded_shape, self.pad_value, dtype=np.uint8)
        out[:self.height, :self.width] = img
        return out


def worker_count() -> int:
    try:
        n = int(os.environ.get("PPT_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def tile_and_fuse(a: np.ndarray, b: np.ndarray, model: PptModel, strategy: FusionStrategy | str,
                  workers: int | None = None) -> np.ndarray:
    """Fuse two 8-bit grayscale images of any extent via non-overlapping S x S windows."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"sources must be 2-D with equal extents, got {a.shape} and {b.shape}")
    strategy = FusionStrategy.parse(strategy)
    plan = TilePlan(a.shape[0], a.shape[1], model.config.size)
    pa, pb = plan.pad(a), plan.pad(b)
    s = plan.window

    def run(origin):
        y, x = origin
        ta = Tensor(normalize(pa[y:y + s, x:x + s]), dtype=model.dtype)
        tb = Tensor(normalize(pb[y:y + s, x:x + s]), dtype=model.dtype)
        fused = fuse_pair(ta, tb, model, strategy).data
        if not np.isfinite(fused).all():
            raise NumericError(f"non-finite fused values in tile at {origin}")
        return denormalize(fused)

    origins = plan.origins
    n = min(workers or worker_count(), len(origins))
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            tiles = list(pool.map(run, origins))
    else:
        tiles = [run(o) for o in origins]
    out = np.empty(plan.padded_shape, dtype=np.uint8)
    for (y, x), tile in zip(origins, tiles):
        out[y:y + s, x:x + s] = tile
    return out[:plan.height, :plan.width]


def fuse_rgb(a: np.ndarray, b: np.ndarray, model: PptModel, strategy: FusionStrategy | str,
             workers: int | None = None) -> np.ndarray:
    """Fuse ``[H, W, 3]`` images channel by channel and restack."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 3 or a.shape[2] != 3:
        raise DimensionError(f"expected two [H, W, 3] images, got {a.shape} and {b.shape}")
    chans = [tile_and_fuse(a[..., c], b[..., c], model, strategy, workers) for c in range(3)]
    return np.stack(chans, axis=-1)


def fuse_images(a: np.ndarray, b: np.ndarray, model: PptModel, strategy: FusionStrategy | str,
                workers: int | None = None) -> np.ndarray:
    """Dispatch on channel count: 2-D arrays are grayscale, ``[H, W, 3]`` is RGB."""
    if a.ndim == 2 and b.ndim == 2:
        return tile_and_fuse(a, b, model, strategy, workers)
    if a.ndim == 3 and b.ndim == 3:
        return fuse_rgb(a, b, model, strategy, workers)
    raise DimensionError(f"channel mismatch between sources: {a.shape} vs {b.shape}")


__all__ = ["FusionStrategy", "TilePlan", "fuse_features", "fuse_pair", "tile_and_fuse",
           "fuse_rgb", "fuse_images", "softmax_pair_weights", "PAD_VALUE"]
