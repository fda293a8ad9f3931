"""Flat binary parameter format.

Layout (little-endian)::

    b"VPFC" | version u32 | count u32 |
    count × ( name_len u16 | name utf-8 | rank u8 | dims u32×rank | values f64×prod(dims) )
"""
import struct

import numpy as np

from ..errors import DataError

MAGIC = b"VPFC"
VERSION = 1


def dump_params(named: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(named))]
    for name, arr in named.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def load_params(blob: bytes) -> tuple[dict[str, np.ndarray], int]:
    """Parse a parameter blob; returns the arrays and the byte offset past them."""
    if blob[:4] != MAGIC:
        raise DataError("not a VPFC parameter blob (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"unsupported VPFC version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * size
    except (struct.error, ValueError) as exc:
        raise DataError(f"truncated VPFC parameter blob: {exc}") from exc
    return out, pos
