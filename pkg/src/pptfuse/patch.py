"""Patch Transformer: per-pixel tokens, attention confined to one p x p patch.

Pipeline for one pyramid level::

    X[H, W] --t2p--> [h*w, p*p, 1] --embed--> [h*w, p*p, C] --+pos-->
        --L x block (shared by every patch)--> --reconstruct--> F[H, W, C]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, Tensor

INIT_STD = 0.02


@dataclass(frozen=True)
class PatchConfig:
    p: int
    channels: int = 16
    blocks: int = 2
    heads: int = 4

    def __post_init__(self):
        if self.p < 1:
            raise ContractError(f"patch side must be >= 1, got {self.p}")
        if self.blocks < 1:
            raise ContractError(f"need at least one transformer block, got {self.blocks}")
        if self.heads < 1 or self.channels % self.heads:
            raise ContractError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")


@dataclass
class PatchSequence:
    tokens: Tensor
    grid: tuple[int, int]
    origin: tuple[int, ...]

    @property
    def p(self) -> int:
        return math.isqrt(self.tokens.shape[1])


@dataclass
class BlockWeights:
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    FIELDS = ("ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
              "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")

    @classmethod
    def init(cls, c: int, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE) -> "BlockWeights":
        def w(*shape):
            return Tensor(rng.normal(0.0, INIT_STD, size=shape), requires_grad=True, dtype=dtype)

        def const(n, value):
            return Tensor(np.full(n, value), requires_grad=True, dtype=dtype)

        return cls(
            ln1_g=const(c, 1.0), ln1_b=const(c, 0.0),
            wq=w(c, c), bq=const(c, 0.0),
            wk=w(c, c), bk=const(c, 0.0),
            wv=w(c, c), bv=const(c, 0.0),
            wo=w(c, c), bo=const(c, 0.0),
            ln2_g=const(c, 1.0), ln2_b=const(c, 0.0),
            w1=w(c, 4 * c), b1=const(4 * c, 0.0),
            w2=w(4 * c, c), b2=const(c, 0.0),
        )

    def named_parameters(self):
        return [(f, getattr(self, f)) for f in self.FIELDS]


@dataclass
class PatchTransformerWeights:
    embed_w: Tensor
    embed_b: Tensor
    pos: Tensor
    blocks: list[BlockWeights] = field(default_factory=list)

    @classmethod
    def init(cls, cfg: PatchConfig, grid: tuple[int, int], rng: np.random.Generator,
             dtype=T.DEFAULT_DTYPE) -> "PatchTransformerWeights":
        c = cfg.channels
        h, w = grid
        embed_w = Tensor(rng.normal(0.0, INIT_STD, size=(1, c)), requires_grad=True, dtype=dtype)
        embed_b = Tensor(np.zeros(c), requires_grad=True, dtype=dtype)
        pos = Tensor(rng.normal(0.0, INIT_STD, size=(h, w, cfg.p * cfg.p, c)), requires_grad=True, dtype=dtype)
        blocks = [BlockWeights.init(c, rng, dtype) for _ in range(cfg.blocks)]
        return cls(embed_w, embed_b, pos, blocks)

    def named_parameters(self):
        out = [("embed_w", self.embed_w), ("embed_b", self.embed_b), ("pos", self.pos)]
        for i, blk in enumerate(self.blocks):
            out.extend((f"block{i}.{n}", t) for n, t in blk.named_parameters())
        return out


# ---------------------------------------------------------------------------


def t2p(x: Tensor, p: int) -> PatchSequence:
    """Split ``[H, W]`` (or ``[H, W, C]``) into row-major ``p x p`` patches.

    Returns tokens of shape ``[h*w, p*p, C]`` with ``C = 1`` for a plain image.
    """
    if x.ndim not in (2, 3):
        raise DimensionError(f"t2p expects [H, W] or [H, W, C], got {x.shape}")
    H, W = x.shape[:2]
    if H % p or W % p:
        raise ContractError(f"image extents {H}x{W} are not divisible by patch side {p}")
    c = 1 if x.ndim == 2 else x.shape[2]
    h, w = H // p, W // p
    y = T.reshape(x, (h, p, w, p, c))
    y = T.transpose(y, (0, 2, 1, 3, 4))
    y = T.reshape(y, (h * w, p * p, c))
    return PatchSequence(y, (h, w), tuple(x.shape))


def reconstruct(tokens: Tensor, grid: tuple[int, int], origin: tuple[int, ...] | None = None) -> Tensor:
    """Inverse of :func:`t2p`: splice ``[h*w, p*p, C]`` tokens back to ``[H, W, C]``.

    If ``origin`` was a 2-D image and the tokens still carry one channel the
    result is 2-D again.
    """
    h, w = grid
    n, pp, c = tokens.shape
    p = math.isqrt(pp)
    if n != h * w or p * p != pp:
        raise DimensionError(f"tokens {tokens.shape} do not match patch grid {grid}")
    y = T.reshape(tokens, (h, w, p, p, c))
    y = T.transpose(y, (0, 2, 1, 3, 4))
    if origin is not None and len(origin) == 2 and c == 1:
        return T.reshape(y, (h * p, w * p))
    return T.reshape(y, (h * p, w * p, c))


def embed(seq: PatchSequence, weights: PatchTransformerWeights) -> Tensor:
    if seq.tokens.shape[-1] != 1:
        raise DimensionError(f"embed expects single-channel tokens, got {seq.tokens.shape}")
    return T.gelu(T.matmul(seq.tokens, weights.embed_w) + weights.embed_b)


def add_position(y: Tensor, pos: Tensor) -> Tensor:
    h, w, pp, c = pos.shape
    if y.shape != (h * w, pp, c):
        raise DimensionError(f"position embedding {pos.shape} does not match tokens {y.shape}")
    return T.add(y, T.reshape(pos, (h * w, pp, c)))


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.matmul(x, w) + b


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, c = x.shape
    return T.transpose(T.reshape(x, (b, t, heads, c // heads)), (0, 2, 1, 3))


def _as_batched(z: Tensor) -> tuple[Tensor, tuple[int, ...]]:
    if z.ndim == 2:
        return T.reshape(z, (1,) + z.shape), z.shape
    if z.ndim == 3:
        return z, z.shape
    raise DimensionError(f"expected [T, C] or [B, T, C] tokens, got {z.shape}")


def msa(z: Tensor, block: BlockWeights, heads: int) -> Tensor:
    """Multi-head self-attention among the tokens of each patch separately."""
    zb, shape = _as_batched(z)
    b, t, c = zb.shape
    if c % heads:
        raise ContractError(f"channels ({c}) must be divisible by heads ({heads})")
    q = _split_heads(_linear(zb, block.wq, block.bq), heads)
    k = _split_heads(_linear(zb, block.wk, block.bk), heads)
    v = _split_heads(_linear(zb, block.wv, block.bv), heads)
    o = T.scaled_dot_attention(q, k, v)
    o = T.reshape(T.transpose(o, (0, 2, 1, 3)), (b, t, c))
    return T.reshape(_linear(o, block.wo, block.bo), shape)


def attention_maps(z: np.ndarray, block: BlockWeights, heads: int) -> np.ndarray:
    """Softmax weights ``[B, heads, T, T]`` that :func:`msa` applies (no tape)."""
    z = z.reshape((-1,) + z.shape[-2:])
    b, t, c = z.shape
    d = c // heads

    def proj(w, bias):
        return (z @ w.data + bias.data).reshape(b, t, heads, d).transpose(0, 2, 1, 3)

    return T.attention_weights(proj(block.wq, block.bq), proj(block.wk, block.bk))


def transformer_block(z: Tensor, block: BlockWeights, heads: int) -> Tensor:
    """Pre-norm residual block: ``z' = MSA(LN(z)) + z; z'' = MLP(LN(z')) + z'``."""
    z1 = msa(T.layer_norm(z, block.ln1_g, block.ln1_b), block, heads) + z
    hidden = T.gelu(_linear(T.layer_norm(z1, block.ln2_g, block.ln2_b), block.w1, block.b1))
    return _linear(hidden, block.w2, block.b2) + z1


def encode_patches(x: Tensor, weights: PatchTransformerWeights, cfg: PatchConfig) -> Tensor:
    """Encode ``X[H, W]`` into a feature map ``F[H, W, C]``."""
    seq = t2p(x, cfg.p)
    if seq.grid != weights.pos.shape[:2]:
        raise DimensionError(f"image grid {seq.grid} does not match position embedding {weights.pos.shape}")
    z = add_position(embed(seq, weights), weights.pos)
    for block in weights.blocks:
        z = transformer_block(z, block, cfg.heads)
    return reconstruct(z, seq.grid)
