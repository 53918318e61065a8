"""Reader/writer for the shared binary tensor container (TSR).

This is the interchange format between the reconstruction toolkit and the
trainer, reimplemented here from the on-disk layout so the two packages
stay decoupled.  Layout (little-endian):

    magic   4 bytes  b"TSR1"
    dtype   u8       0 = float32, 1 = uint8
    ndim    u8
    dims    ndim x u64
    payload row-major array data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"TSR1"

_CODE_FOR = {np.dtype("float32"): 0, np.dtype("uint8"): 1}
_DTYPE_FOR = {0: np.dtype("<f4"), 1: np.dtype("u1")}


def write_tensor(path, tensor: np.ndarray) -> None:
    """Write a float32 or uint8 array to ``path``; round trips are bit-exact."""
    arr = np.asarray(tensor)
    if arr.ndim > 0:
        arr = np.ascontiguousarray(arr)
    if arr.dtype not in _CODE_FOR:
        raise FormatError(
            f"unsupported dtype {arr.dtype}; cast to float32 or uint8 first"
        )
    header = MAGIC + struct.pack(
        f"<BB{arr.ndim}Q", _CODE_FOR[arr.dtype], arr.ndim, *arr.shape
    )
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_tensor(path) -> np.ndarray:
    """Read a TSR file into a numpy array in native byte order."""
    blob = Path(path).read_bytes()
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a TSR file")
    code, ndim = struct.unpack_from("<BB", blob, 4)
    if code not in _DTYPE_FOR:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if len(blob) < 6 + 8 * ndim:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}Q", blob, 6)
    dtype = _DTYPE_FOR[code]
    payload = blob[6 + 8 * ndim :]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, want {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)
