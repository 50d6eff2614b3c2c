"""Flat binary checkpoint blob.

Layout: magic b"DGS1", version u32, tensor count u32, then per tensor:
name length u32 + UTF-8 name, rank u32, dims (u32 each), values as
little-endian float32. All integers little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DGS1"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_blob(path, tensors: dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    path.write_bytes(b"".join(chunks))


def load_blob(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    off = 0

    def read(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {off}")
        out = raw[off:off + n]
        off += n
        return out

    if read(4) != MAGIC:
        raise CheckpointError("bad magic: not a DGS1 checkpoint")
    version, count = struct.unpack("<II", read(8))
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} not supported (want {VERSION})")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", read(4))
        name = read(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", read(4))
        dims = struct.unpack(f"<{rank}I", read(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(read(4 * n), dtype="<f4").reshape(dims)
        tensors[name] = values.copy()
    if off != len(raw):
        raise CheckpointError(f"trailing bytes in checkpoint ({len(raw) - off})")
    return tensors
