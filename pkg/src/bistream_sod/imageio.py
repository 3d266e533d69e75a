"""8-bit grayscale image reading and writing.

Binary PGM (P5) is handled natively; ASCII PGM (P2) is accepted too. PNG goes
through Pillow when it is installed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

SUPPORTED_SUFFIXES = (".pgm", ".png")


def _pgm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(raw[start:pos])
    return tokens, pos


def decode_pgm(raw: bytes) -> np.ndarray:
    (magic, width, height, maxval), pos = _pgm_tokens(raw, 4)
    if magic not in (b"P5", b"P2"):
        raise ValueError(f"not a grayscale PGM (magic {magic!r})")
    w, h, maxv = int(width), int(height), int(maxval)
    if w <= 0 or h <= 0 or not 0 < maxv < 65536:
        raise ValueError(f"bad PGM header: {w}x{h}, maxval {maxv}")
    if magic == b"P2":
        values = np.array(raw[pos:].split()[: w * h], dtype=np.int64)
        if values.size != w * h:
            raise ValueError("truncated PGM pixel data")
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxv > 255 else np.dtype(np.uint8)
        n = w * h * dtype.itemsize
        if len(raw) - pos < n:
            raise ValueError("truncated PGM pixel data")
        values = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).astype(np.int64)
    if maxv != 255:
        values = np.rint(values * 255.0 / maxv)
    return np.clip(values, 0, 255).astype(np.uint8).reshape(h, w)


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"encode_pgm needs a 2-D uint8 array, got {img.dtype} {img.shape}")
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()


def _pillow():
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover - depends on the environment
        raise ValueError("PNG support needs Pillow installed") from None
    return Image


def read_gray(path) -> np.ndarray:
    """Return an (H, W) uint8 array."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return decode_pgm(path.read_bytes())
    if suffix == ".png":
        with _pillow().open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8)
    raise ValueError(f"unsupported image format: {path.name}")


def write_gray(path, img: np.ndarray) -> None:
    path = Path(path)
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"write_gray needs a 2-D uint8 array, got {img.dtype} {img.shape}")
    if path.suffix.lower() == ".png":
        _pillow().fromarray(img).save(path)
    else:
        path.write_bytes(encode_pgm(img))


def to_saliency(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0


def to_mask(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img) >= 128).astype(np.float64)


def from_saliency(s: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(s) * 255.0), 0, 255).astype(np.uint8)


def read_rgb(path) -> np.ndarray:
    """Return a (3, H, W) float image in [0, 1]; grayscale input is replicated."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        with _pillow().open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return np.ascontiguousarray(arr.transpose(2, 0, 1))
    gray = to_saliency(read_gray(path))
    return np.repeat(gray[None], 3, axis=0)
