"""TEN1 tensor files: magic, u32 ndim, u32 dims, little-endian f32 payload (row-major)."""
import os
import struct

import numpy as np

TEN1_MAGIC = b"TEN1"


def write_ten1(path, array):
    arr = np.asarray(array, dtype="<f4")  # tobytes() is row-major; keeps 0-d shapes
    header = TEN1_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())
    os.replace(tmp, path)


def read_ten1(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != TEN1_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    offset = 8 + 4 * ndim
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - offset != 4 * count:
        raise ValueError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims).astype(np.float32)
