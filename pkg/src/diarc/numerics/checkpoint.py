"""Binary parameter checkpoints.

Layout: magic ``DIARC1``, version u32, entry count u32, then a manifest
of (name, shape, payload offset) records, then the raw little-endian f32
buffers. Entries are written in sorted-name order so identical parameter
sets always produce identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DIARC1"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    names = sorted(arrays)
    manifest = bytearray()
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        encoded = name.encode("utf-8")
        manifest += struct.pack("<H", len(encoded)) + encoded
        manifest += struct.pack("<B", arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}I", *arr.shape)
        manifest += struct.pack("<Q", len(payload))
        payload += arr.tobytes()
    blob = MAGIC + struct.pack("<II", VERSION, len(names)) + bytes(manifest) + bytes(payload)
    Path(path).write_bytes(blob)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes, not a checkpoint file")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<II", blob, pos)
    pos += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    entries: list[tuple[str, tuple[int, ...], int]] = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        (offset,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        entries.append((name, shape, offset))
    payload = blob[pos:]
    out: dict[str, np.ndarray] = {}
    for name, shape, offset in entries:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 4 * n
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(payload[offset:end], dtype="<f4").reshape(shape)
        out[name] = np.ascontiguousarray(arr)
    return out
