"""A small named-array container used for features and checkpoints.

Layout, all integers little-endian:

    magic       9 bytes  b"VIGT-ARR\\0"
    version     1 byte   (currently 1)
    count       uint32
    entries     count times:
        name_len  uint16, then name_len bytes of UTF-8
        dtype     1 byte, 0 = float32, 1 = float64
        rank      uint8
        dims      rank times uint32
    payloads    count arrays, raw little-endian bytes, same order
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from .errors import FormatError

MAGIC = b"VIGT-ARR\x00"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_arrays(path: str, arrays: dict[str, np.ndarray]) -> None:
    """Write named float arrays; only float32/float64 are representable."""
    entries = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODE_FOR_KIND:
            raise FormatError(f"array {name!r} has unsupported dtype {arr.dtype}")
        code = _CODE_FOR_KIND[arr.dtype]
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise FormatError(f"array name too long: {len(nb)} bytes")
        if arr.ndim > 0xFF:
            raise FormatError(f"array {name!r} rank {arr.ndim} exceeds 255")
        header = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim)
        header += struct.pack(f"<{arr.ndim}I", *arr.shape)
        entries.append(header)
        payloads.append(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(entries)))
        for e in entries:
            fh.write(e)
        for p in payloads:
            fh.write(p)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_arrays(path: str) -> "OrderedDict[str, np.ndarray]":
    """Read a container back; raises FormatError on any malformation."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: bad magic, not an array container")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    (count,) = r.unpack("<I")
    metas = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"{path}: undecodable entry name") from e
        code, rank = r.unpack("<BB")
        if code not in _DTYPE_CODES:
            raise FormatError(f"{path}: entry {name!r} has unknown dtype code {code}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        metas.append((name, _DTYPE_CODES[code], dims))
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, dtype, dims in metas:
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = r.take(n * dtype.itemsize)
        out[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes after payloads")
    return out
