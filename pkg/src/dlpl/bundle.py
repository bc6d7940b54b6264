"""Flat binary bundles of named float64 arrays.

Layout (little-endian): magic ``b"DLPL"``, ``u32`` version, then records of
``u32`` name length, UTF-8 name, ``u32`` rank, ``rank`` x ``u32`` extents and
the row-major float64 values.  Records run until end of file.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DLPL"
VERSION = 1


class BundleFormatError(IOError):
    pass


def save_bundle(path, arrays: dict) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in arrays.items():
        arr = np.array(arr, dtype="<f8", order="C")     # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_bundle(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise BundleFormatError(f"{path}: not a parameter bundle (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise BundleFormatError(f"{path}: unsupported bundle version {version}")
    pos = 8
    out = {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(buf):
                raise BundleFormatError(f"{path}: truncated record {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += 8 * count
    except struct.error as exc:
        raise BundleFormatError(f"{path}: truncated bundle") from exc
    return out
