"""Pyramid Patch Transformer auto-encoder: model, loss, training loop, persistence."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor as T
from .optim import Adam
from .pyramid import FeatureStack, PyramidConfig, init_levels, pyramid_encode
from .tensor import ContractError, DimensionError, GradTape, Tensor

log = logging.getLogger(__name__)

DECODER_VARIANTS = ("fc_gelu_fc_gelu_tanh", "fc_gelu_fc_tanh")


class NumericError(RuntimeError):
    """A loss or activation became NaN/Inf."""


@dataclass(frozen=True)
class ModelConfig(PyramidConfig):
    decoder: str = "fc_gelu_fc_tanh"

    def __post_init__(self):
        super().__post_init__()
        if self.decoder not in DECODER_VARIANTS:
            raise ContractError(f"decoder must be one of {DECODER_VARIANTS}, got {self.decoder!r}")

    @property
    def decoder_hidden(self) -> int:
        return 2 * self.out_channels

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class DecoderWeights:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, width: int, hidden: int, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE):
        return cls(
            w1=Tensor(rng.normal(0.0, 0.02, size=(width, hidden)), requires_grad=True, dtype=dtype),
            b1=Tensor(np.zeros(hidden), requires_grad=True, dtype=dtype),
            w2=Tensor(rng.normal(0.0, 0.02, size=(hidden, 1)), requires_grad=True, dtype=dtype),
            b2=Tensor(np.zeros(1), requires_grad=True, dtype=dtype),
        )

    def named_parameters(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]


class PptModel:
    """Encoder (m+1 independent Patch Transformers) plus pointwise MLP decoder."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=T.DEFAULT_DTYPE):
        self.config = config
        rng = np.random.default_rng(seed)
        self.levels = init_levels(config, rng, dtype)
        self.decoder = DecoderWeights.init(config.out_channels, config.decoder_hidden, rng, dtype)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, lvl in enumerate(self.levels):
            out.extend((f"level{i}.{n}", t) for n, t in lvl.named_parameters())
        out.extend((f"decoder.{n}", t) for n, t in self.decoder.named_parameters())
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    @property
    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.parameters())

    @property
    def dtype(self):
        return self.decoder.w1.dtype

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "PptModel":
        """Deep copy with every parameter cast to ``dtype``."""
        clone = PptModel.__new__(PptModel)
        clone.config = self.config
        clone.levels = init_levels(self.config, np.random.default_rng(0), dtype)
        clone.decoder = DecoderWeights.init(self.config.out_channels, self.config.decoder_hidden,
                                            np.random.default_rng(0), dtype)
        for (_, dst), (_, src) in zip(clone.named_parameters(), self.named_parameters()):
            dst.data[...] = src.data
        return clone

    def encode(self, x: Tensor) -> FeatureStack:
        return pyramid_encode(x, self.levels, self.config)

    def decode(self, stack: FeatureStack | Tensor) -> Tensor:
        return decode(stack, self)

    def reconstruct(self, x: Tensor) -> Tensor:
        return self.decode(self.encode(x))

    def loss(self, x: Tensor) -> Tensor:
        return reconstruct_loss(x, self)


def decode(stack: FeatureStack | Tensor, model: PptModel) -> Tensor:
    """Map every spatial position's channel vector to one value in (-1, 1)."""
    f = stack.features if isinstance(stack, FeatureStack) else stack
    dec = model.decoder
    width = dec.w1.shape[0]
    if f.shape[-1] != width:
        raise DimensionError(f"decoder expects {width} channels, got {f.shape}")
    spatial = f.shape[:-1]
    flat = T.reshape(f, (int(np.prod(spatial)), width))
    h = T.gelu(T.matmul(flat, dec.w1) + dec.b1)
    y = T.matmul(h, dec.w2) + dec.b2
    if model.config.decoder == "fc_gelu_fc_gelu_tanh":
        y = T.gelu(y)
    return T.reshape(T.tanh(y), spatial)


def reconstruct_loss(x: Tensor, model: PptModel) -> Tensor:
    return T.mse(x, model.reconstruct(x))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 1
    epochs: int = 50
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ContractError(f"invalid training settings: {self}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ContractError(f"max_steps must be >= 0, got {self.max_steps}")


@dataclass(frozen=True)
class LossRecord:
    step: int
    epoch: int
    loss: float


def train(corpus: Sequence[np.ndarray], model_config: ModelConfig, train_config: TrainConfig,
          model: PptModel | None = None,
          on_step: Callable[[LossRecord], None] | None = None) -> tuple[PptModel, list[LossRecord]]:
    """Adam on the reconstruction loss; each corpus entry is a normalised ``[S, S]`` array.

    Images are visited in a seeded shuffled order each epoch.  Training stops
    after ``epochs`` passes or ``max_steps`` optimiser steps, whichever comes
    first.
    """
    if len(corpus) == 0:
        raise ContractError("training corpus is empty")
    S = model_config.size
    for i, img in enumerate(corpus):
        if img.shape != (S, S):
            raise DimensionError(f"corpus image {i} has shape {img.shape}, expected {(S, S)}")
    if model is None:
        model = PptModel(model_config, seed=train_config.seed)
    params = model.parameters()
    opt = Adam(params, lr=train_config.lr)
    order_rng = np.random.default_rng((train_config.seed, 1))
    images = [Tensor(img, dtype=model.dtype) for img in corpus]
    bs = train_config.batch_size
    curve: list[LossRecord] = []
    step = 0
    for epoch in range(train_config.epochs):
        order = order_rng.permutation(len(images))
        epoch_losses = []
        for start in range(0, len(order), bs):
            if train_config.max_steps is not None and step >= train_config.max_steps:
                break
            batch = order[start:start + bs]
            opt.zero_grad()
            total = 0.0
            for idx in batch:
                with GradTape() as tape:
                    loss = reconstruct_loss(images[idx], model)
                    if len(batch) > 1:
                        loss = T.scale(loss, 1.0 / len(batch))
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(f"non-finite loss at step {step}")
                tape.backward(loss)
                total += value
            opt.step()
            step += 1
            rec = LossRecord(step, epoch, total)
            curve.append(rec)
            epoch_losses.append(total)
            if on_step is not None:
                on_step(rec)
        if epoch_losses:
            log.info("epoch %d: mean loss %.6f over %d steps", epoch, float(np.mean(epoch_losses)), len(epoch_losses))
        if train_config.max_steps is not None and step >= train_config.max_steps:
            break
    return model, curve


def write_loss_csv(curve: Iterable[LossRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "epoch", "loss"])
        for r in curve:
            w.writerow([r.step, r.epoch, repr(float(r.loss))])


# ---------------------------------------------------------------------------
# persistence
#
#   b"PPTM" | u32 version | u32 n | n bytes config JSON | u64 count |
#   count float32 LE (named_parameters order) | u32 CRC32 of everything before

MAGIC = b"PPTM"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


def model_to_bytes(model: PptModel) -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    blobs = [np.ascontiguousarray(p.data, dtype="<f4").tobytes() for p in model.parameters()]
    body = b"".join([MAGIC, struct.pack("<II", FORMAT_VERSION, len(cfg)), cfg,
                     struct.pack("<Q", model.num_parameters), *blobs])
    return body + struct.pack("<I", zlib.crc32(body))


def model_from_bytes(raw: bytes) -> PptModel:
    if len(raw) < 4:
        raise TruncatedFileError("file is shorter than the magic header")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 12:
        raise TruncatedFileError("file ends inside the header")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"model format version {version}, this build reads {FORMAT_VERSION}")
    pos = 12 + n
    if len(raw) < pos + 8:
        raise TruncatedFileError("file ends inside the config block")
    try:
        config = ModelConfig.from_dict(json.loads(raw[12:pos].decode()))
    except (ValueError, TypeError) as exc:
        raise ModelFileError(f"unreadable config block: {exc}") from exc
    (count,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    end = pos + 4 * count
    if len(raw) < end + 4:
        raise TruncatedFileError(f"expected {count} parameters, file ends early")
    if len(raw) > end + 4:
        raise ModelFileError("trailing bytes after checksum")
    (crc,) = struct.unpack_from("<I", raw, end)
    if zlib.crc32(raw[:end]) != crc:
        raise ChecksumError("CRC32 mismatch")
    model = PptModel(config)
    if count != model.num_parameters:
        raise ModelFileError(f"config implies {model.num_parameters} parameters, file holds {count}")
    flat = np.frombuffer(raw, dtype="<f4", count=count, offset=pos)
    i = 0
    for p in model.parameters():
        k = p.data.size
        p.data[...] = flat[i:i + k].reshape(p.shape)
        i += k
    return model


def save_model(model: PptModel, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> PptModel:
    return model_from_bytes(Path(path).read_bytes())
