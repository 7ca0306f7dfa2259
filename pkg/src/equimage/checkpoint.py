"""Binary checkpoint format for model parameters.

Layout (all integers little-endian unsigned):

    bytes 0..7    magic b"EQIMCKPT"
    uint32        format version (currently 1)
    uint32        parameter count
    per parameter, in insertion order:
        uint32        name length in bytes
        bytes         UTF-8 name
        uint32        rank
        uint32 * rank dims
        float32 * prod(dims)  data, little-endian, C order

Round-trips are bit-exact; parameters must be float32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EQIMCKPT"
VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        if arr.dtype != np.float32:
            raise ValueError(f"parameter {name!r} must be float32, got {arr.dtype}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = 16
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", data, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=offset).reshape(dims)
        offset += 4 * size
        params[name] = arr.astype(np.float32).copy()
    if offset != len(data):
        raise ValueError(f"{path} has {len(data) - offset} trailing bytes")
    return params
