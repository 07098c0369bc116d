"""Binary checkpoint format for named tensors.

Layout: magic "AFCK", u32 version, u32 tensor count, then per tensor:
u16 name length, UTF-8 name, u8 dtype (0 = f32, 1 = f64), u8 rank,
u32 dims, raw little-endian values.  EMA shadow weights are stored under
names prefixed "ema.".
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AFCK"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray]):
    """Write named arrays; dict iteration order is preserved on disk."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            code = _DTYPE_CODES.get(arr.dtype)
            if code is None:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(_CODE_DTYPES[code], copy=False).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        code, rank = struct.unpack_from("<BB", data, offset)
        offset += 2
        dims = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        out[name] = np.frombuffer(data[offset:offset + nbytes], dtype=dtype).reshape(dims).copy()
        offset += nbytes
    return out
