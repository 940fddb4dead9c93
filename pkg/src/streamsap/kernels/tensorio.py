"""Binary tensor files: magic ``T4DS``, u32 version, u32 rank, u64 dims,
then little-endian float64 data in row-major order.

A bundle file is a run of such records: a rank-1 record of level strides,
then ``cls``, ``obj`` and ``reg`` for each level.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .distill import LevelLogits, LogitsBundle

MAGIC = b"T4DS"
VERSION = 1


class TensorFormatError(ValueError):
    pass


def write_tensor(fh: BinaryIO, arr) -> None:
    arr = np.array(arr, dtype="<f8", order="C")  # keeps rank 0, unlike ascontiguousarray
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r} at offset {fh.tell() - len(magic)}")
    header = fh.read(8)
    if len(header) != 8:
        raise TensorFormatError("truncated header")
    version, rank = struct.unpack("<II", header)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    raw_dims = fh.read(8 * rank)
    if len(raw_dims) != 8 * rank:
        raise TensorFormatError("truncated shape record")
    dims = struct.unpack(f"<{rank}Q", raw_dims)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    data = fh.read(8 * count)
    if len(data) != 8 * count:
        raise TensorFormatError(f"expected {count} float64 values, got {len(data) // 8}")
    return np.frombuffer(data, dtype="<f8").reshape(dims).astype(np.float64)


def save_tensor(path, arr) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def save_bundle(path, bundle: LogitsBundle) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, np.array(bundle.strides, dtype=np.float64))
        for lv in bundle.levels:
            write_tensor(fh, lv.cls)
            write_tensor(fh, lv.obj)
            write_tensor(fh, lv.reg)


def load_bundle(path) -> LogitsBundle:
    size = Path(path).stat().st_size
    with open(path, "rb") as fh:
        strides = read_tensor(fh)
        levels = []
        for s in strides:
            cls, obj, reg = read_tensor(fh), read_tensor(fh), read_tensor(fh)
            levels.append(LevelLogits(cls, obj, reg, int(s)))
        if fh.tell() != size:
            raise TensorFormatError(f"trailing bytes after offset {fh.tell()}")
    return LogitsBundle(levels)
