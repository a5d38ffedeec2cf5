"""Multi-scale encoder: one Patch Transformer per dyadic level, no weight sharing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .patch import PatchConfig, PatchTransformerWeights, encode_patches
from .tensor import ContractError, DimensionError, Tensor

UPSAMPLE_MODES = ("nearest", "bilinear")


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class PyramidConfig:
    size: int = 256
    patch: int = 32
    channels: int = 16
    blocks: int = 2
    heads: int = 4
    upsample: str = "nearest"

    def __post_init__(self):
        if not (_is_pow2(self.size) and _is_pow2(self.patch)) or self.size < self.patch:
            raise ContractError(f"size ({self.size}) and patch ({self.patch}) must be powers of two with size >= patch")
        if self.upsample not in UPSAMPLE_MODES:
            raise ContractError(f"upsample must be one of {UPSAMPLE_MODES}, got {self.upsample!r}")
        PatchConfig(self.patch, self.channels, self.blocks, self.heads)

    @property
    def depth(self) -> int:
        """m = log2(S / p); there are m + 1 levels."""
        return int(math.log2(self.size // self.patch))

    @property
    def levels(self) -> list[PatchConfig]:
        return [PatchConfig(self.patch, self.channels, self.blocks, self.heads) for _ in range(self.depth + 1)]

    def level_side(self, i: int) -> int:
        return self.size >> i

    @property
    def out_channels(self) -> int:
        return (self.depth + 1) * self.channels


@dataclass
class FeatureStack:
    """``F_out[S, S, (m+1)*C]``; channels ``[i*C, (i+1)*C)`` belong to level ``i``."""

    features: Tensor
    offsets: tuple[int, ...]

    @property
    def shape(self):
        return self.features.shape

    @property
    def num_levels(self) -> int:
        return len(self.offsets) - 1

    def level(self, i: int) -> np.ndarray:
        if not 0 <= i < self.num_levels:
            raise IndexError(f"level {i} out of range for {self.num_levels} levels")
        return self.features.data[..., self.offsets[i]:self.offsets[i + 1]]


def downsample(x: Tensor) -> Tensor:
    """2x2 average pooling over the two leading (spatial) axes."""
    H, W = x.shape[:2]
    if H % 2 or W % 2:
        raise ContractError(f"downsample needs even extents, got {H}x{W}")
    rest = x.shape[2:]
    y = T.reshape(x, (H // 2, 2, W // 2, 2) + rest)
    return T.mean(y, axis=(1, 3))


def _bilinear_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    # half-pixel centres, edge-clamped
    m = np.zeros((n_out, n_in), dtype=np.float64)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m.astype(dtype)


def upsample(f: Tensor, height: int, width: int, mode: str = "nearest") -> Tensor:
    """Stretch ``[h, w, C]`` to ``[height, width, C]`` by an integer power-of-two factor."""
    h, w = f.shape[:2]
    if height % h or width % w:
        raise ContractError(f"cannot upsample {h}x{w} to {height}x{width} by an integer factor")
    fy, fx = height // h, width // w
    if fy != fx or not _is_pow2(fy):
        raise ContractError(f"upsample factor must be the same power of two on both axes, got {fy}x{fx}")
    if fy == 1:
        return f
    if mode == "nearest":
        return T.repeat(T.repeat(f, fy, axis=0), fx, axis=1)
    if mode != "bilinear":
        raise ContractError(f"unknown upsample mode {mode!r}")
    c = f.shape[2]
    uy = Tensor(_bilinear_matrix(height, h, f.dtype), dtype=f.dtype)
    ux = Tensor(_bilinear_matrix(width, w, f.dtype), dtype=f.dtype)
    g = T.matmul(uy, T.reshape(f, (h, w * c)))                      # [H, w*C]
    g = T.transpose(T.reshape(g, (height, w, c)), (0, 2, 1))         # [H, C, w]
    g = T.matmul(g, T.transpose(ux))                                 # [H, C, W]
    return T.transpose(g, (0, 2, 1))


def init_levels(cfg: PyramidConfig, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE) -> list[PatchTransformerWeights]:
    out = []
    for i, lc in enumerate(cfg.levels):
        side = cfg.level_side(i) // cfg.patch
        out.append(PatchTransformerWeights.init(lc, (side, side), rng, dtype))
    return out


def encode_level(x: Tensor, i: int, weights: PatchTransformerWeights, cfg: PyramidConfig) -> Tensor:
    """Level-``i`` features at full resolution (before concatenation)."""
    xi = x
    for _ in range(i):
        xi = downsample(xi)
    f = encode_patches(xi, weights, cfg.levels[i])
    return upsample(f, x.shape[0], x.shape[1], cfg.upsample)


def pyramid_encode(x: Tensor, levels: list[PatchTransformerWeights], cfg: PyramidConfig) -> FeatureStack:
    if x.shape != (cfg.size, cfg.size):
        raise DimensionError(f"model expects a {cfg.size}x{cfg.size} image, got {x.shape}")
    if len(levels) != cfg.depth + 1:
        raise ContractError(f"expected {cfg.depth + 1} level weight sets, got {len(levels)}")
    feats = []
    xi = x
    for i, weights in enumerate(levels):
        if i:
            xi = downsample(xi)
        f = encode_patches(xi, weights, cfg.levels[i])
        feats.append(upsample(f, cfg.size, cfg.size, cfg.upsample))
    offsets = tuple(i * cfg.channels for i in range(len(levels) + 1))
    return FeatureStack(T.concat(feats, axis=-1), offsets)
