"""Flat ``key = value`` run configuration.

Example file::

    # model
    size = 256
    patch = 32
    channels = 16
    # training
    lr = 1e-4
    epochs = 50

Blank lines and ``#`` comments are ignored.  Unknown or repeated keys are
errors.  Every key is optional; defaults follow the reference training
setup (256 x 256 input, 32 x 32 patches, Adam at 1e-4, batch 1, 50 epochs).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .model import DECODER_VARIANTS, ModelConfig, TrainConfig
from .pyramid import UPSAMPLE_MODES
from .tensor import ContractError

STRATEGIES = ("average", "max", "softmax")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # model
    size: int = 256
    patch: int = 32
    channels: int = 16
    blocks: int = 2
    heads: int = 4
    upsample: str = "nearest"
    decoder: str = "fc_gelu_fc_tanh"
    # training
    lr: float = 1e-4
    batch_size: int = 1
    epochs: int = 50
    seed: int = 0
    max_steps: int | None = None
    corpus: str = ""
    # fusion
    strategy: str = "average"
    output_dir: str = "."

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.decoder not in DECODER_VARIANTS:
            raise ConfigError(f"decoder must be one of {DECODER_VARIANTS}, got {self.decoder!r}")
        if self.upsample not in UPSAMPLE_MODES:
            raise ConfigError(f"upsample must be one of {UPSAMPLE_MODES}, got {self.upsample!r}")
        try:
            self.model_config()
            self.train_config()
        except ContractError as exc:
            raise ConfigError(str(exc)) from exc

    def model_config(self) -> ModelConfig:
        return ModelConfig(size=self.size, patch=self.patch, channels=self.channels, blocks=self.blocks,
                           heads=self.heads, upsample=self.upsample, decoder=self.decoder)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.seed, max_steps=self.max_steps)

    def replace(self, **overrides: Any) -> "RunConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(clean) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **clean)


def _coerce(name: str, ftype: str, raw: str):
    raw = raw.strip()
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "int | None":
            return None if raw.lower() in ("", "none") else int(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {ftype}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        values[key] = _coerce(key, types[key], raw)
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {'none' if v is None else repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(format_config(cfg))
