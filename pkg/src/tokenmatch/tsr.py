"""TSR binary tensor containers.

A ``.tsr`` file holds exactly one tensor:

    magic   4 bytes   b"TSR0"
    version u16 LE    currently 1
    dtype   u16 LE    code from DTYPE_CODES
    rank    u64 LE
    dims    rank x u64 LE
    payload row-major little-endian element bytes

A ``.tsrb`` bundle holds named tensors:

    magic   4 bytes   b"TSRB"
    version u16 LE    currently 1
    count   u64 LE
    entries count x (name_len u64 LE, name utf-8, embedded TSR record)

Both formats are bit-exact across platforms; loading then re-saving a bundle
reproduces the file byte for byte.
"""

import io
import struct
from collections import OrderedDict

import numpy as np

from .errors import CheckpointError

TENSOR_MAGIC = b"TSR0"
BUNDLE_MAGIC = b"TSRB"
FORMAT_VERSION = 1

DTYPE_CODES = {
    np.dtype("float32"): 1,
    np.dtype("float64"): 2,
    np.dtype("int32"): 3,
    np.dtype("int64"): 4,
    np.dtype("uint8"): 5,
    np.dtype("bool"): 6,
    np.dtype("int16"): 7,
    np.dtype("uint32"): 8,
}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


def _tensor_bytes(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array)
    if array.dtype not in DTYPE_CODES:
        raise CheckpointError(f"unsupported dtype for TSR container: {array.dtype}")
    le = array.astype(array.dtype.newbyteorder("<"), copy=False)
    header = TENSOR_MAGIC + struct.pack("<HH", FORMAT_VERSION, DTYPE_CODES[array.dtype])
    header += struct.pack("<Q", array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape) if array.ndim else b""
    return header + le.tobytes(order="C")


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated TSR record")
    return data


def _read_tensor_stream(fh) -> np.ndarray:
    magic = _read_exact(fh, 4)
    if magic != TENSOR_MAGIC:
        raise CheckpointError(f"bad TSR magic {magic!r}")
    version, dtype_code = struct.unpack("<HH", _read_exact(fh, 4))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported TSR version {version}")
    if dtype_code not in CODE_DTYPES:
        raise CheckpointError(f"unknown TSR dtype code {dtype_code}")
    dtype = CODE_DTYPES[dtype_code]
    (rank,) = struct.unpack("<Q", _read_exact(fh, 8))
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = _read_exact(fh, count * dtype.itemsize)
    array = np.frombuffer(payload, dtype=dtype.newbyteorder("<"), count=count)
    return array.astype(dtype, copy=True).reshape(shape)


def write_tensor(path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(_tensor_bytes(np.asarray(array)))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = _read_tensor_stream(fh)
        if fh.read(1):
            raise CheckpointError(f"trailing bytes in {path}")
        return arr


def write_bundle(path, tensors: "OrderedDict[str, np.ndarray] | dict") -> None:
    buf = io.BytesIO()
    buf.write(BUNDLE_MAGIC)
    buf.write(struct.pack("<HQ", FORMAT_VERSION, len(tensors)))
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<Q", len(encoded)))
        buf.write(encoded)
        buf.write(_tensor_bytes(np.asarray(array)))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_bundle(path) -> "OrderedDict[str, np.ndarray]":
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != BUNDLE_MAGIC:
            raise CheckpointError(f"bad bundle magic {magic!r} in {path}")
        version, count = struct.unpack("<HQ", _read_exact(fh, 10))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported bundle version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<Q", _read_exact(fh, 8))
            name = _read_exact(fh, name_len).decode("utf-8")
            out[name] = _read_tensor_stream(fh)
        if fh.read(1):
            raise CheckpointError(f"trailing bytes in {path}")
    return out
