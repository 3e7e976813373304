"""Binary PGM (P5) and PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    pass


def _tokens(buf: bytes, count: int) -> tuple[list, int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out, pos, n = [], 0, len(buf)
    while len(out) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise NetpbmError("truncated header")
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        out.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return out, pos + 1


def decode(buf: bytes) -> np.ndarray:
    """Decode a P5/P6 byte string into ``(H, W)`` or ``(H, W, 3)`` uint8."""
    (magic, w, h, maxval), start = _tokens(buf, 4)
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"unsupported magic {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise NetpbmError("malformed header") from exc
    if maxval != 255:
        raise NetpbmError(f"only maxval 255 is supported, got {maxval}")
    chans = 3 if magic == b"P6" else 1
    size = w * h * chans
    raster = buf[start:start + size]
    if len(raster) != size:
        raise NetpbmError(f"expected {size} raster bytes, found {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape(h, w, 3) if chans == 3 else arr.reshape(h, w)


def encode(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise NetpbmError(f"expected uint8 pixels, got {img.dtype}")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise NetpbmError(f"cannot encode array of shape {img.shape}")
    h, w = img.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def read(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write_pgm(path, img: np.ndarray) -> None:
    if np.asarray(img).ndim != 2:
        raise NetpbmError("PGM needs a 2-D array")
    Path(path).write_bytes(encode(img))


def write_ppm(path, img: np.ndarray) -> None:
    if np.asarray(img).ndim != 3:
        raise NetpbmError("PPM needs an (H, W, 3) array")
    Path(path).write_bytes(encode(img))


def to_unit(img: np.ndarray) -> np.ndarray:
    """8-bit pixels to floats in [0, 1]."""
    return img.astype(np.float32) / 255.0


def from_unit(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
