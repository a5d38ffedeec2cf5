"""Fusion quality indicators on 8-bit grayscale images.

All metrics take ``uint8`` arrays and compute in float64.  Pair metrics
against two sources are reported per source and as the mean of the two.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


def _u8(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype != np.uint8:
        if not np.issubdtype(x.dtype, np.integer) or x.min() < 0 or x.max() > 255:
            raise ValueError(f"expected 8-bit samples, got dtype {x.dtype}")
        x = x.astype(np.uint8)
    return x


def _same_shape(*xs: np.ndarray) -> None:
    if len({x.shape for x in xs}) != 1:
        raise ValueError(f"image extents differ: {[x.shape for x in xs]}")


def entropy(x: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin intensity histogram."""
    x = _u8(x)
    p = np.bincount(x.ravel(), minlength=256) / x.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) + 0.0


def sd(x: np.ndarray) -> float:
    """Population standard deviation of the intensities."""
    return float(np.std(np.asarray(x, dtype=np.float64)))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    xc = x - x.mean()
    yc = y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if den == 0.0:
        warnings.warn("correlation with a constant image is undefined; returning 0", RuntimeWarning, stacklevel=3)
        return 0.0
    return float(np.clip((xc @ yc) / den, -1.0, 1.0))


def cc(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation coefficient; 0 when either image is constant."""
    _same_shape(np.asarray(x), np.asarray(y))
    return _pearson(x, y)


def mi(x: np.ndarray, y: np.ndarray) -> float:
    """Mutual information (bits) from the 256 x 256 joint histogram."""
    x, y = _u8(x), _u8(y)
    _same_shape(x, y)
    joint = np.bincount(x.ravel().astype(np.int64) * 256 + y.ravel(), minlength=256 * 256)
    pxy = joint.reshape(256, 256) / x.size
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    nz = pxy > 0
    outer = np.outer(px, py)
    return max(0.0, float((pxy[nz] * np.log2(pxy[nz] / outer[nz])).sum()))


def _box_sum(a: np.ndarray, k: int) -> np.ndarray:
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    s[1:, 1:] = a.cumsum(0).cumsum(1)
    return s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]


def ssim_map(x: np.ndarray, y: np.ndarray, window: int = SSIM_WINDOW) -> np.ndarray:
    """Local SSIM over every ``window x window`` block (stride 1, population moments)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(x, y)
    if min(x.shape) < window:
        raise ValueError(f"image {x.shape} is smaller than the {window}x{window} window")
    n = window * window
    mx = _box_sum(x, window) / n
    my = _box_sum(y, window) / n
    vx = np.maximum(_box_sum(x * x, window) / n - mx * mx, 0.0)
    vy = np.maximum(_box_sum(y * y, window) / n - my * my, 0.0)
    cxy = _box_sum(x * y, window) / n - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return num / den


def ssim(x: np.ndarray, y: np.ndarray, window: int = SSIM_WINDOW) -> float:
    return float(ssim_map(x, y, window).mean())


def scd(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Sum of correlations of differences: ``cc(F - B, A) + cc(F - A, B)``."""
    f, a, b = (np.asarray(v, dtype=np.float64) for v in (f, a, b))
    _same_shape(f, a, b)
    return _pearson(f - b, a) + _pearson(f - a, b)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    en: float
    sd: float
    cc: float
    cc_a: float
    cc_b: float
    mi: float
    mi_a: float
    mi_b: float
    ssim: float
    ssim_a: float
    ssim_b: float
    scd: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


def evaluate_all(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> MetricReport:
    f, a, b = _u8(f), _u8(a), _u8(b)
    _same_shape(f, a, b)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cc_a, cc_b = cc(f, a), cc(f, b)
        s = scd(f, a, b)
    mi_a, mi_b = mi(f, a), mi(f, b)
    ss_a, ss_b = ssim(f, a), ssim(f, b)
    return MetricReport(
        en=entropy(f), sd=sd(f),
        cc=(cc_a + cc_b) / 2, cc_a=cc_a, cc_b=cc_b,
        mi=(mi_a + mi_b) / 2, mi_a=mi_a, mi_b=mi_b,
        ssim=(ss_a + ss_b) / 2, ssim_a=ss_a, ssim_b=ss_b,
        scd=s,
    )


def average_reports(reports: Sequence[MetricReport]) -> MetricReport:
    if not reports:
        raise ValueError("no reports to average")
    cols = MetricReport.columns()
    return MetricReport(**{c: float(np.mean([getattr(r, c) for r in reports])) for c in cols})


def write_csv(rows: Iterable[tuple[str, MetricReport]], path: str | Path) -> None:
    """One row per (name, report); column order is ``name`` then :meth:`MetricReport.columns`."""
    cols = MetricReport.columns()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", *cols])
        for name, rep in rows:
            w.writerow([name, *(repr(getattr(rep, c)) for c in cols)])


def write_json(rows: Iterable[tuple[str, MetricReport]], path: str | Path) -> None:
    payload = [{"name": name, **rep.as_dict()} for name, rep in rows]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
