"""Binary dataset (``FBDS``) and checkpoint (``FBCK``) files.

All integers are little-endian; reals are little-endian float64.

FBDS layout::

    b"FBDS" | u32 version | u32 L | u32 d | u32 C | u32 count
    count x ( i32 class | L*d f64 )

FBCK layout::

    b"FBCK" | u32 version | u32 tensor_count
    tensor_count x ( u32 name_len | name bytes (utf-8) | u32 rank | rank x u32 dim | prod(dims) f64 )
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["FormatError", "write_dataset", "read_dataset", "write_checkpoint", "read_checkpoint"]

DATASET_MAGIC = b"FBDS"
CHECKPOINT_MAGIC = b"FBCK"
VERSION = 1
_F64 = np.dtype("<f8")


class FormatError(ValueError):
    pass


def write_dataset(path, z0: np.ndarray, labels: np.ndarray, C: int) -> None:
    z0 = np.asarray(z0, dtype=np.float64)
    labels = np.asarray(labels)
    if z0.ndim != 3 or labels.shape != (z0.shape[0],):
        raise ValueError("dataset needs z0 of shape (n, L, d) and one label per clip")
    n, L, d = z0.shape
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC + struct.pack("<5I", VERSION, L, d, C, n))
        for clip, label in zip(z0, labels):
            fh.write(struct.pack("<i", int(label)))
            fh.write(clip.astype(_F64).tobytes())


def read_dataset(path) -> tuple[np.ndarray, np.ndarray, int]:
    """Return ``(z0, labels, C)``."""
    data = Path(path).read_bytes()
    if data[:4] != DATASET_MAGIC:
        raise FormatError(f"{path}: not an FBDS file")
    version, L, d, C, n = struct.unpack_from("<5I", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported FBDS version {version}")
    record = np.dtype([("label", "<i4"), ("z", _F64, (L, d))])
    body = data[24:]
    if len(body) != n * record.itemsize:
        raise FormatError(f"{path}: expected {n} clips, found {len(body)} payload bytes")
    recs = np.frombuffer(body, dtype=record, count=n)
    return recs["z"].astype(np.float64), recs["label"].astype(np.int64), C


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<2I", VERSION, len(tensors)))
        for name, value in tensors.items():
            value = np.asarray(value, dtype=np.float64)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack(f"<{1 + value.ndim}I", value.ndim, *value.shape))
            fh.write(value.astype(_F64).tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not an FBCK file")
    version, count = struct.unpack_from("<2I", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported FBCK version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            size = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(data, dtype=_F64, count=size, offset=pos)
            pos += 8 * size
            out[name] = values.reshape(dims).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return out
