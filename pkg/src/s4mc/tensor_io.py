"""Little-endian binary container for probability, feature and label tensors.

Layout::

    b"S4MC" | version u16 | dtype u8 | ndim u8 | dims u32 * ndim | payload

dtype 0 is float32, dtype 1 is uint16 label data where 0xFFFF marks IGNORE.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from s4mc.tensor_core import IGNORE

MAGIC = b"S4MC"
VERSION = 1
DTYPE_F32 = 0
DTYPE_U16 = 1
U16_IGNORE = 0xFFFF

_NUMPY_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U16: np.dtype("<u2")}


class TensorFormatError(ValueError):
    pass


def encode_tensor(array: np.ndarray, dtype_code: int) -> bytes:
    if dtype_code not in _NUMPY_DTYPES:
        raise ValueError(f"unknown dtype code {dtype_code}")
    array = np.asarray(array)
    if array.ndim > 255:
        raise ValueError("too many dimensions")
    header = MAGIC + struct.pack("<HBB", VERSION, dtype_code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_NUMPY_DTYPES[dtype_code]).tobytes()
    return header + payload


def decode_tensor(data: bytes) -> tuple[np.ndarray, int]:
    if len(data) < 8 or data[:4] != MAGIC:
        raise TensorFormatError("missing S4MC magic")
    version, dtype_code, ndim = struct.unpack_from("<HBB", data, 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if dtype_code not in _NUMPY_DTYPES:
        raise TensorFormatError(f"unknown dtype code {dtype_code}")
    offset = 8 + 4 * ndim
    if len(data) < offset:
        raise TensorFormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", data, 8)
    dtype = _NUMPY_DTYPES[dtype_code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(data) - offset != expected:
        raise TensorFormatError(f"payload is {len(data) - offset} bytes, expected {expected}")
    array = np.frombuffer(data, dtype=dtype, offset=offset).reshape(dims)
    return array.astype(dtype.newbyteorder("=")), dtype_code


def save_float_tensor(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array, DTYPE_F32))


def load_float_tensor(path) -> np.ndarray:
    array, code = decode_tensor(Path(path).read_bytes())
    if code != DTYPE_F32:
        raise TensorFormatError(f"{path}: expected float32 tensor, found dtype code {code}")
    return array


def save_label_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.size and mask.max() >= U16_IGNORE:
        raise ValueError("label values must be below 0xFFFF")
    if np.any((mask < 0) & (mask != IGNORE)):
        raise ValueError("negative labels other than IGNORE cannot be stored")
    stored = np.where(mask == IGNORE, U16_IGNORE, mask).astype(np.uint16)
    Path(path).write_bytes(encode_tensor(stored, DTYPE_U16))


def load_label_mask(path) -> np.ndarray:
    array, code = decode_tensor(Path(path).read_bytes())
    if code != DTYPE_U16:
        raise TensorFormatError(f"{path}: expected uint16 label mask, found dtype code {code}")
    labels = array.astype(np.int64)
    labels[array == U16_IGNORE] = IGNORE
    return labels


def load_any(path) -> tuple[np.ndarray, int]:
    """Decode either kind; labels come back with the in-memory IGNORE sentinel."""
    array, code = decode_tensor(Path(path).read_bytes())
    if code == DTYPE_U16:
        labels = array.astype(np.int64)
        labels[array == U16_IGNORE] = IGNORE
        return labels, code
    return array, code
