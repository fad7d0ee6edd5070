"""Binary container for named float64 arrays (model checkpoints).

Layout, all integers little-endian:

    magic   8 bytes  b"DSENCKPT"
    version u32      currently 1
    count   u32      number of entries
    entry*  count times:
        name_len u32, name UTF-8 bytes, ndim u32, dims u32 * ndim,
        offset u64 (byte offset of this entry inside the payload)
    payload concatenated float64 little-endian arrays

Read errors distinguish a wrong container (``DataFormatError``) from a
header/payload mismatch (``DataCorruptionError`` with the failing byte
offset).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataCorruptionError, DataFormatError

MAGIC = b"DSENCKPT"
VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write ``arrays`` to ``path`` in the container format above."""
    header = bytearray()
    header += MAGIC
    header += struct.pack("<II", VERSION, len(arrays))
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        header += struct.pack("<I", len(encoded)) + encoded
        header += struct.pack("<I", arr.ndim)
        header += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        header += struct.pack("<Q", len(payload))
        payload += arr.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(header) + bytes(payload))


def load_arrays(path) -> dict[str, np.ndarray]:
    """Read a container written by ``save_arrays``."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(MAGIC)

    def need(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise DataCorruptionError(
                f"{path}: truncated while reading {what}", byte_offset=pos
            )
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", need(8, "version/count"))
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")

    entries = []
    for i in range(count):
        (name_len,) = struct.unpack("<I", need(4, f"entry {i} name length"))
        name = need(name_len, f"entry {i} name").decode("utf-8")
        (ndim,) = struct.unpack("<I", need(4, f"entry {i} ndim"))
        shape = struct.unpack(f"<{ndim}I", need(4 * ndim, f"entry {i} shape")) if ndim else ()
        (offset,) = struct.unpack("<Q", need(8, f"entry {i} offset"))
        entries.append((name, shape, offset))

    payload_start = pos
    arrays = {}
    for name, shape, offset in entries:
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        lo = payload_start + offset
        if lo + n_bytes > len(blob):
            raise DataCorruptionError(
                f"{path}: payload for '{name}' extends past end of file",
                byte_offset=min(len(blob), lo),
            )
        arrays[name] = np.frombuffer(blob[lo : lo + n_bytes], dtype="<f8").reshape(shape).copy()
    return arrays
