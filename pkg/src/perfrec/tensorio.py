"""Minimal binary tensor container plus JSON/CSV helpers.

File layout (little-endian):

    magic   4 bytes  b"TSR1"
    dtype   u8       0 = float32, 1 = uint8
    ndim    u8
    dims    ndim x u64
    payload row-major array data

The format is deliberately trivial so that other languages can read and
write it with a few lines of code.  Round trips are bit-exact.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"TSR1"

_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}


def write_tensor(path, tensor: np.ndarray) -> None:
    """Write a float32 or uint8 array to ``path`` in TSR format."""
    arr = np.asarray(tensor)
    if arr.ndim > 0:  # ascontiguousarray would promote 0-d to 1-d
        arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise FormatError(
            f"unsupported dtype {arr.dtype}; cast to float32 or uint8 first"
        )
    code = _DTYPE_CODES[arr.dtype]
    # floats are stored little-endian regardless of host order
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", code, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(payload)


def read_tensor(path) -> np.ndarray:
    """Read a TSR file back into a numpy array (bit-exact round trip)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 6:
        raise FormatError(f"{path}: truncated header")
    code, ndim = struct.unpack_from("<BB", blob, 4)
    if code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    header_end = 6 + 8 * ndim
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}Q", blob, 6)
    dtype = _CODE_DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = blob[header_end:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_json(path, obj) -> None:
    """Write JSON with sorted keys so identical content is byte-identical."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]
