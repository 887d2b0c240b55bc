"""Flat binary weight container.

Layout (little-endian)::

    b"PSWT" | version u32 | count u32
    count x ( name_len u16 | utf-8 name | rank u8 | rank x extent u32 | dtype u8 | payload )
    frozen_count u32 | frozen_count x ( name_len u16 | utf-8 name )

dtype 0 is float32 and 1 is float64.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"PSWT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class WeightFormatError(ValueError):
    pass


def _write_name(buf: io.BytesIO, name: str) -> None:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise WeightFormatError(f"name too long: {name[:40]}...")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def dumps(tensors: dict[str, np.ndarray], frozen: Iterable[str] = ()) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise WeightFormatError(f"{name}: unsupported dtype {arr.dtype}")
        _write_name(buf, name)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        code = _CODES[arr.dtype]
        buf.write(struct.pack("<B", code))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    frozen = sorted(frozen)
    buf.write(struct.pack("<I", len(frozen)))
    for name in frozen:
        _write_name(buf, name)
    return buf.getvalue()


def loads(data: bytes) -> tuple[dict[str, np.ndarray], set[str]]:
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise WeightFormatError("truncated weight file")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    def name() -> str:
        (length,) = struct.unpack("<H", take(2))
        return bytes(take(length)).decode("utf-8")

    if bytes(take(4)) != MAGIC:
        raise WeightFormatError("not a PSWT weight file")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise WeightFormatError(f"unsupported weight file version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        key = name()
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        (code,) = struct.unpack("<B", take(1))
        if code not in _DTYPES:
            raise WeightFormatError(f"{key}: unknown dtype code {code}")
        dtype = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(bytes(take(n * dtype.itemsize)), dtype=dtype).reshape(shape)
        tensors[key] = arr.astype(dtype.newbyteorder("="))
    (n_frozen,) = struct.unpack("<I", take(4))
    frozen = {name() for _ in range(n_frozen)}
    if pos != len(view):
        raise WeightFormatError(f"{len(view) - pos} trailing bytes after weight file")
    return tensors, frozen


def save(path: str | Path, tensors: dict[str, np.ndarray], frozen: Iterable[str] = ()) -> None:
    Path(path).write_bytes(dumps(tensors, frozen))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], set[str]]:
    return loads(Path(path).read_bytes())
