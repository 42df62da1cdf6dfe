"""Binary netpbm readers/writers: P6 (PPM, RGB) and P5 (PGM, gray), 8-bit."""

from __future__ import annotations

import numpy as np


class NetpbmError(ValueError):
    """Malformed netpbm file."""


def _read_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(data):
            raise NetpbmError("truncated netpbm header")
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    return tokens, pos + 1  # single whitespace byte separates header and raster


def _read(path, magic, channels):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(magic):
        raise NetpbmError(f"{path}: expected {magic.decode()} file")
    tokens, offset = _read_tokens(data[len(magic):], 3)
    offset += len(magic)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise NetpbmError(f"{path}: non-numeric header fields {tokens}") from None
    if maxval != 255:
        raise NetpbmError(f"{path}: only 8-bit (maxval 255) supported, got {maxval}")
    expected = width * height * channels
    raster = data[offset:offset + expected]
    if len(raster) != expected:
        raise NetpbmError(f"{path}: raster has {len(raster)} bytes, expected {expected}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, channels).copy()


def read_ppm(path):
    """(H, W, 3) uint8 from a binary P6 file."""
    return _read(path, b"P6", 3)


def read_pgm(path):
    """(H, W) uint8 from a binary P5 file."""
    return _read(path, b"P5", 1)


def _write(path, magic, arr):
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def write_ppm(path, image):
    """Write (H, W, 3) uint8 as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise NetpbmError(f"write_ppm expects (H, W, 3) uint8, got {image.shape} {image.dtype}")
    _write(path, b"P6", image)


def write_pgm(path, image):
    """Write (H, W) uint8 as binary P5."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise NetpbmError(f"write_pgm expects (H, W) uint8, got {image.shape} {image.dtype}")
    _write(path, b"P5", image)
