"""TSR binary tensor files.

Layout: magic ``b"TSR1"``, u8 rank, ``rank`` u32 little-endian extents, then
``prod(extents)`` f32 little-endian values in row-major order.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"TSR1"


class TSRFormatError(ValueError):
    pass


def dumps(array) -> bytes:
    arr = np.asarray(getattr(array, "data", array))
    if arr.ndim > 255:
        raise TSRFormatError(f"rank {arr.ndim} does not fit in a u8")
    header = MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def loads(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise TSRFormatError(f"bad magic {buf[:4]!r}")
    if len(buf) < 5:
        raise TSRFormatError("truncated header")
    rank = buf[4]
    off = 5 + 4 * rank
    if len(buf) < off:
        raise TSRFormatError("truncated header")
    shape = struct.unpack(f"<{rank}I", buf[5:off])
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != off + 4 * count:
        raise TSRFormatError(f"expected {count} values for shape {shape}, got {(len(buf) - off) / 4:g}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
    return data.reshape(shape).astype(np.float32)


def save(path: str | os.PathLike, array) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(array))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads(fh.read())
