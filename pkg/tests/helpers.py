import numpy as np

from pptfuse.model import ModelConfig, PptModel
from pptfuse.tensor import Tensor

TOY = ModelConfig(size=32, patch=8, channels=8, blocks=1, heads=1)

# one "[PASS|FAIL] n. name: detail" line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[tuple[int, str]] = []


def record(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)


def jitter(model: PptModel, std: float, seed: int = 99) -> PptModel:
    """Add Gaussian noise to every parameter (moves off the tiny-init regime)."""
    rng = np.random.default_rng(seed)
    for _, p in model.named_parameters():
        p.data += rng.normal(0.0, std, p.shape).astype(p.dtype)
    return model


def footprint(model: PptModel, x: np.ndarray, pixel: tuple[int, int], level: int, delta: float = 0.5) -> np.ndarray:
    """Boolean [S, S] map of positions whose level-``level`` features move when ``pixel`` is bumped."""
    base = model.encode(Tensor(x)).level(level)
    x2 = x.copy()
    x2[pixel] += delta
    moved = model.encode(Tensor(x2)).level(level)
    return np.any(moved != base, axis=-1)


def block_mask(size: int, pixel: tuple[int, int], side: int) -> np.ndarray:
    y0 = pixel[0] // side * side
    x0 = pixel[1] // side * side
    m = np.zeros((size, size), bool)
    m[y0:y0 + side, x0:x0 + side] = True
    return m
