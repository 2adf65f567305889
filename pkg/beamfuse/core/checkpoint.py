# Parameter checkpoint files.
#
# Layout: magic "BFCK1", u32 parameter count, then for each parameter
# u32 name length, UTF-8 name, u32 rank, rank x u32 dims and the raw
# float32 data. All integers and floats are little-endian.

import os
import struct
from typing import Dict, Mapping

import numpy as np

from beamfuse.core.config import CHECKPOINT_MAGIC
from beamfuse.core.errors import DatasetIOError


def encode_checkpoint(params: Mapping[str, np.ndarray]) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(params))]
    for name, array in params.items():
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(array, dtype="<f4")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> Dict[str, np.ndarray]:
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise DatasetIOError("Not a parameter checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise DatasetIOError("Checkpoint truncated")
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    (count,) = take("<I")
    params: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if offset + name_len > len(blob):
            raise DatasetIOError("Checkpoint truncated")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        nbytes = 4 * size
        if offset + nbytes > len(blob):
            raise DatasetIOError("Checkpoint truncated")
        data = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        params[name] = data.reshape(dims).astype(np.float32)
        offset += nbytes
    if offset != len(blob):
        raise DatasetIOError("Trailing bytes after checkpoint payload")
    return params


def write_atomic(path: str, payload: bytes) -> None:
    """Write via a `.tmp` sibling so a failed write never leaves a partial file."""
    tmp_path = f"{path}.tmp"
    try:
        with open(tmp_path, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_path, path)
    except OSError as e:
        raise DatasetIOError("Cannot write file", path=path, cause=e)


def save_checkpoint(path: str, params: Mapping[str, np.ndarray]) -> bytes:
    payload = encode_checkpoint(params)
    write_atomic(path, payload)
    return payload


def load_checkpoint(path: str) -> Dict[str, np.ndarray]:
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as e:
        raise DatasetIOError("Cannot read checkpoint", path=path, cause=e)
    return decode_checkpoint(blob)
