"""Binary 8-bit PPM (P6) and PGM (P5) reading and writing."""

from __future__ import annotations

import os

import numpy as np

from .errors import DataError


def _tokens(buf: bytes, count: int, path) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos, n = [], 0, len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated netpbm header")
        tokens.append(buf[start:pos])
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise DataError(f"{path}: header must end with a single whitespace byte")
    return tokens, pos + 1


def decode(buf: bytes, path="<bytes>") -> np.ndarray:
    """Return H x W x 3 (P6) or H x W (P5) uint8 array."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: not a binary PGM/PPM (magic {magic!r})")
    tokens, offset = _tokens(buf[2:], 3, path)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DataError(f"{path}: non-numeric netpbm header {tokens!r}") from None
    if width <= 0 or height <= 0:
        raise DataError(f"{path}: invalid extent {width}x{height}")
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = buf[offset : offset + expected]
    if len(payload) != expected:
        raise DataError(f"{path}: expected {expected} pixel bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape(height, width, 3) if channels == 3 else arr.reshape(height, width)


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise DataError("netpbm pixels must lie in 0..255")
        arr = arr.astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    elif arr.ndim == 2:
        magic = b"P5"
    else:
        raise DataError(f"cannot encode array of shape {arr.shape} as PGM/PPM")
    h, w = arr.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes()


def read(path: str | os.PathLike, kind: str | None = None) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    arr = decode(buf, path)
    if kind == "ppm" and arr.ndim != 3:
        raise DataError(f"{path}: expected a PPM (P6) colour image")
    if kind == "pgm" and arr.ndim != 2:
        raise DataError(f"{path}: expected a PGM (P5) grey image")
    return arr


def write(path: str | os.PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(arr))
