from __future__ import annotations

import io

import numpy as np
import pytest

from streamsap.kernels.distill import random_bundle
from streamsap.kernels.tensorio import (
    MAGIC,
    TensorFormatError,
    load_bundle,
    load_tensor,
    read_tensor,
    save_bundle,
    save_tensor,
    write_tensor,
)


@pytest.mark.parametrize("shape", [(), (3,), (2, 3), (1, 2, 3, 4)])
def test_tensor_round_trip(tmp_path, shape):
    arr = np.random.default_rng(0).normal(size=shape)
    save_tensor(tmp_path / "t.bin", arr)
    back = load_tensor(tmp_path / "t.bin")
    assert back.shape == arr.shape and np.array_equal(back, arr)


def test_header_layout():
    buf = io.BytesIO()
    write_tensor(buf, np.arange(6.0).reshape(2, 3))
    raw = buf.getvalue()
    assert raw[:4] == MAGIC
    assert raw[4:12] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert raw[12:28] == (2).to_bytes(8, "little") + (3).to_bytes(8, "little")
    assert len(raw) == 28 + 6 * 8


@pytest.mark.parametrize(
    "mangle",
    [
        lambda b: b"XXXX" + b[4:],
        lambda b: b[:10],
        lambda b: b[:20],
        lambda b: b[:-3],
        lambda b: b[:4] + (2).to_bytes(4, "little") + b[8:],
    ],
)
def test_corrupt_files_rejected(mangle):
    buf = io.BytesIO()
    write_tensor(buf, np.ones((2, 3)))
    with pytest.raises(TensorFormatError):
        read_tensor(io.BytesIO(mangle(buf.getvalue())))


def test_bundle_round_trip(tmp_path):
    b = random_bundle(np.random.default_rng(1), hw=(32, 64), strides=(8, 16), batch=2)
    save_bundle(tmp_path / "b.t4ds", b)
    back = load_bundle(tmp_path / "b.t4ds")
    assert back.strides == b.strides
    for x, y in zip(back.levels, b.levels):
        assert np.array_equal(x.cls, y.cls) and np.array_equal(x.obj, y.obj) and np.array_equal(x.reg, y.reg)


def test_bundle_trailing_bytes(tmp_path):
    b = random_bundle(np.random.default_rng(2), strides=(8,))
    path = tmp_path / "b.t4ds"
    save_bundle(path, b)
    with open(path, "ab") as fh:
        fh.write(b"\0")
    with pytest.raises(TensorFormatError):
        load_bundle(path)
