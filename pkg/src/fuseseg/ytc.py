"""The "YTC1" named-tensor container.

Layout: magic bytes ``YTC1``, little-endian u32 entry count, then per
entry: u16 name length, UTF-8 name, u8 dtype code, u8 rank, rank x u32
dims, raw little-endian values.  Dtype codes: 0 = float32; this
implementation additionally uses 1 = uint8 for checkpoint metadata (the
embedded config text).  Entries are written sorted by name so
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"YTC1"
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
CODE_FOR = {np.dtype("<f4"): 0, np.dtype("u1"): 1}


class ContainerError(ValueError):
    """Malformed tensor container."""


def write_tensors(path, entries):
    """Write a name -> array mapping; arrays must be float32 or uint8."""
    blob = bytearray(MAGIC)
    blob += struct.pack("<I", len(entries))
    for name in sorted(entries):
        arr = np.ascontiguousarray(entries[name])
        if arr.dtype not in CODE_FOR:
            raise ContainerError(f"entry {name!r}: dtype {arr.dtype} not storable "
                                 "(use float32 or uint8)")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ContainerError(f"entry name too long ({len(encoded)} bytes)")
        if arr.ndim > 255:
            raise ContainerError(f"entry {name!r}: rank {arr.ndim} too large")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<BB", CODE_FOR[arr.dtype], arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def read_tensors(path):
    """Read a container back into an ordered name -> array dict."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {data[:4]!r}")
    pos = 4
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        code, rank = struct.unpack_from("<BB", data, pos)
        pos += 2
        if code not in DTYPE_CODES:
            raise ContainerError(f"{path}: entry {name!r} has unknown dtype code {code}")
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        dtype = DTYPE_CODES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        raw = data[pos:pos + nbytes]
        if len(raw) != nbytes:
            raise ContainerError(f"{path}: entry {name!r} truncated")
        pos += nbytes
        entries[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    if pos != len(data):
        raise ContainerError(f"{path}: {len(data) - pos} trailing bytes")
    return entries
