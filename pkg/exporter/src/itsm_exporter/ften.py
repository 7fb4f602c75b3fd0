"""Write side of the tensor interchange container.

The exporter talks to the evaluation toolkit only through files, so it
carries its own writer for the documented layout rather than importing the
toolkit. All little-endian:

    magic ``FTEN`` | version u8 = 1 | dtype u8 (0 = float32) | ndim u8 |
    pad u8 = 0 | ndim x u32 dims | row-major float32 payload

Every scalar must be finite and every dimension >= 1; 0-d input is promoted
to shape (1,).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidTensor

MAGIC = b"FTEN"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBBBB")


def write_tensor(path: str | Path, tensor: np.ndarray) -> None:
    arr = np.ascontiguousarray(tensor, dtype=np.float32)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 255:
        raise InvalidTensor(f"rank {arr.ndim} exceeds the u8 ndim field")
    if any(d < 1 for d in arr.shape):
        raise InvalidTensor(f"every dimension must be >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidTensor("tensor contains NaN or Inf")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + dims + arr.tobytes())
