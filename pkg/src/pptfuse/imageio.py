"""8-bit image files and the pixel <-> model-space mapping.

Images are plain ``uint8`` arrays: ``[H, W]`` for grayscale, ``[H, W, 3]``
for RGB.  Nothing here rescales or converts colour unless asked to.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


class ImageFormatError(ValueError):
    pass


class BadMagicError(ImageFormatError):
    pass


class UnsupportedDepthError(ImageFormatError):
    pass


class TruncatedImageError(ImageFormatError):
    pass


# ---------------------------------------------------------------------------
# PGM (binary P5, maxval 255)


def _pgm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens: list[bytes] = []
    i, n = 0, len(raw)
    while len(tokens) < count:
        while i < n and raw[i:i + 1].isspace():
            i += 1
        if i < n and raw[i:i + 1] == b"#":
            while i < n and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not raw[i:i + 1].isspace() and raw[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise TruncatedImageError("PGM header ends early")
        tokens.append(raw[start:i])
    # exactly one whitespace byte separates the header from the raster
    if i >= n or not raw[i:i + 1].isspace():
        raise TruncatedImageError("PGM header is not terminated")
    return tokens, i + 1


def decode_pgm(raw: bytes) -> np.ndarray:
    if raw[:2] != b"P5":
        raise BadMagicError(f"not a binary PGM (magic {raw[:2]!r}); only P5 is supported")
    (_, w, h, maxval), offset = _pgm_tokens(raw, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ImageFormatError("non-numeric PGM header field") from None
    if maxval != 255:
        raise UnsupportedDepthError(f"PGM maxval {maxval} is not supported (need 255)")
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"invalid PGM extents {w}x{h}")
    payload = raw[offset:offset + w * h]
    if len(payload) < w * h:
        raise TruncatedImageError(f"PGM payload holds {len(payload)} of {w * h} samples")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def encode_pgm(img: np.ndarray) -> bytes:
    img = _check_u8(img)
    if img.ndim != 2:
        raise ImageFormatError(f"PGM holds grayscale only, got shape {img.shape}")
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def load_pgm(path: str | Path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def save_pgm(img: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(encode_pgm(img))


# ---------------------------------------------------------------------------
# PNG (8-bit gray / RGB via Pillow)


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PNG":
            raise BadMagicError(f"{path} is not a PNG file")
        if im.mode not in ("L", "RGB"):
            raise UnsupportedDepthError(f"{path}: PNG mode {im.mode!r} unsupported; only 8-bit gray or RGB")
        try:
            return np.asarray(im, dtype=np.uint8).copy()
        except OSError as exc:
            raise TruncatedImageError(f"{path}: {exc}") from exc


def save_png(img: np.ndarray, path: str | Path) -> None:
    img = _check_u8(img)
    if img.ndim == 2:
        mode = "L"
    elif img.ndim == 3 and img.shape[2] == 3:
        mode = "RGB"
    else:
        raise ImageFormatError(f"PNG output needs [H, W] or [H, W, 3], got {img.shape}")
    Image.fromarray(img, mode=mode).save(path, format="PNG")


def load_image(path: str | Path) -> np.ndarray:
    """Load by extension (``.pgm`` or ``.png``)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return load_pgm(path)
    if suffix == ".png":
        return load_png(path)
    raise ImageFormatError(f"unsupported image type {suffix!r} ({path})")


def save_image(img: np.ndarray, path: str | Path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        save_pgm(img, path)
    elif suffix == ".png":
        save_png(img, path)
    else:
        raise ImageFormatError(f"unsupported image type {suffix!r} ({path})")


def _check_u8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ImageFormatError(f"expected uint8 samples, got {img.dtype}")
    return img


# ---------------------------------------------------------------------------


def to_gray(img: np.ndarray) -> np.ndarray:
    """BT.601 luma ``0.299 R + 0.587 G + 0.114 B``, rounded half away from zero."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img.astype(np.uint8, copy=True)
    y = img[..., :3].astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def normalize(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Map 0..255 to [-1, 1] via ``v / 127.5 - 1``."""
    return (np.asarray(img, dtype=np.float64) / 127.5 - 1.0).astype(dtype)


def denormalize(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize`; rounds half away from zero, clamps to 0..255."""
    v = (np.asarray(x, dtype=np.float64) + 1.0) * 127.5
    v = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)
