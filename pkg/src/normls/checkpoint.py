"""Little-endian tensor container used for model checkpoints and datasets.

Layout::

    b"CLBL"                       magic
    u32 version                   currently 1
    u32 count                     number of tensors
    count times:
        u32 name_len, name bytes (UTF-8)
        u32 rank, rank x u32 dims
        prod(dims) x f64 values, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

MAGIC = b"CLBL"
VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read tensor file: {exc.strerror}", path) from exc
    return parse_tensors(buf, path)


def parse_tensors(buf: bytes, path=None) -> dict[str, np.ndarray]:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise DataFormatError(f"truncated: need {n} bytes, {len(buf) - pos} left", path, pos)
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise DataFormatError("bad magic, expected b'CLBL'", path, 0)
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise DataFormatError(f"unsupported version {version}", path, 4)
    out = {}
    for _ in range(count):
        start = pos
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise DataFormatError("tensor name is not UTF-8", path, start + 4) from None
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64)
        if name in out:
            raise DataFormatError(f"duplicate tensor name {name!r}", path, start)
        out[name] = values.reshape(dims)
    if pos != len(buf):
        raise DataFormatError(f"{len(buf) - pos} trailing bytes", path, pos)
    return out
