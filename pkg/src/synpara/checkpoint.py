"""Self-describing binary container for named arrays plus a JSON manifest.

Layout: 8-byte magic, uint32 version, uint32 manifest length + UTF-8 JSON,
uint32 array count, then per array: uint16 name length + name, uint8 dtype
string length + dtype, uint8 ndim, uint32 dims, raw C-order bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError

MAGIC = b"SYNPCKPT"
VERSION = 1


def save_arrays(path, arrays: dict, manifest: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        blob = json.dumps(manifest or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)  # ascontiguousarray would promote 0-d to 1-d
            name_b = name.encode("utf-8")
            dtype_b = arr.dtype.str.encode("ascii")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", len(dtype_b)))
            fh.write(dtype_b)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes(order="C"))


def load_arrays(path) -> tuple[dict, dict]:
    """Returns (arrays, manifest)."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise DataError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (dlen,) = struct.unpack("<B", fh.read(1))
            dtype = np.dtype(fh.read(dlen).decode("ascii"))
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n_bytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise DataError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        return arrays, manifest
