"""Binary weight file (``FCNW``) reader and writer.

Layout, little-endian::

    b"FCNW"  u32 version (=1)  u32 blob_count
    per blob: u16 name_len, name (UTF-8), u8 rank, rank x u32 dims,
              prod(dims) x f32 values (row-major)

A layer ``L`` stores its kernel under ``L`` and its bias under ``L.bias``.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = ["WeightFileError", "write_weights", "read_weights", "encode_weights", "decode_weights"]

MAGIC = b"FCNW"
VERSION = 1


class WeightFileError(ValueError):
    """Malformed or unsupported weight file."""


def encode_weights(store: Mapping[str, tuple[np.ndarray, np.ndarray]]) -> bytes:
    blobs = []
    for name in store:
        w, b = store[name]
        blobs.append((name, np.asarray(w)))
        blobs.append((name + ".bias", np.asarray(b)))
    parts = [MAGIC, struct.pack("<II", VERSION, len(blobs))]
    for name, arr in blobs:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_weights(data: bytes) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise WeightFileError(f"truncated weight file at byte {pos} (needed {n} more bytes)")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise WeightFileError("not an FCNW weight file (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    blobs: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = bytes(take(nlen)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFileError(f"blob name is not UTF-8 at byte {pos}") from exc
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        if name in blobs:
            raise WeightFileError(f"duplicate blob {name!r}")
        blobs[name] = arr
    if pos != len(view):
        raise WeightFileError(f"{len(view) - pos} trailing bytes after last blob")

    store = {}
    for name, arr in blobs.items():
        if name.endswith(".bias"):
            continue
        bias = blobs.get(name + ".bias")
        if bias is None:
            raise WeightFileError(f"layer {name!r} has no bias blob")
        store[name] = (arr, bias)
    orphans = [n for n in blobs if n.endswith(".bias") and n[:-5] not in store]
    if orphans:
        raise WeightFileError(f"bias blobs without weights: {orphans}")
    return store


def write_weights(path: str | Path, store: Mapping[str, tuple[np.ndarray, np.ndarray]]) -> None:
    Path(path).write_bytes(encode_weights(store))


def read_weights(path: str | Path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    return decode_weights(Path(path).read_bytes())
