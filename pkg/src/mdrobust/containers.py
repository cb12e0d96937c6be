"""Binary array container and CSV export for maps and adversarial sets.

Container layout (little-endian)::

    magic    4 bytes  b"MDAR"
    version  uint16   1
    dtype    uint8    1 = float64, 2 = complex128 (interleaved re, im)
    ndim     uint8
    dims     uint64 * ndim
    data     row-major values
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MDAR"
VERSION = 1
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<c16")}
_CODES = {np.dtype(np.float64): 1, np.dtype(np.complex128): 2}


class ContainerError(ValueError):
    pass


def dumps(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if np.iscomplexobj(array):
        array = array.astype(np.complex128)
    else:
        array = array.astype(np.float64)
    code = _CODES[array.dtype]
    header = MAGIC + struct.pack("<HBB", VERSION, code, array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()


def loads(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise ContainerError("bad magic; not an array container")
    version, code, ndim = struct.unpack_from("<HBB", blob, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if code not in _DTYPES:
        raise ContainerError(f"unknown dtype code {code}")
    shape = struct.unpack_from(f"<{ndim}Q", blob, 8)
    offset = 8 + 8 * ndim
    dtype = _DTYPES[code]
    count = int(np.prod(shape)) if ndim else 1
    if len(blob) - offset != count * dtype.itemsize:
        raise ContainerError("payload size does not match header shape")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def save(path, array: np.ndarray) -> None:
    Path(path).write_bytes(dumps(array))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())


def save_csv(path, matrix: np.ndarray) -> None:
    """One row per Doppler bin. Complex entries are written as Python complex literals."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ContainerError("CSV export needs a 2-D matrix")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([repr(complex(v)) if np.iscomplexobj(matrix) else repr(float(v)) for v in row])


def load_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if any("j" in cell for row in rows for cell in row):
        return np.array([[complex(cell.strip("()")) for cell in row] for row in rows])
    return np.array([[float(cell) for cell in row] for row in rows])
