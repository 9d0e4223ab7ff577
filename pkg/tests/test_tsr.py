import numpy as np
import pytest

from tokenmatch import CheckpointError
from tokenmatch import tsr


@pytest.mark.parametrize("dtype", ["float32", "float64", "int32", "int64", "uint8", "bool"])
def test_tensor_round_trip(tmp_path, dtype):
    rng = np.random.default_rng(0)
    arr = (rng.random((3, 5, 2)) * 100).astype(dtype)
    path = tmp_path / "x.tsr"
    tsr.write_tensor(path, arr)
    back = tsr.read_tensor(path)
    assert back.dtype == arr.dtype
    assert back.shape == arr.shape
    assert np.array_equal(back, arr)


def test_scalar_and_empty(tmp_path):
    tsr.write_tensor(tmp_path / "s.tsr", np.float64(3.25))
    assert tsr.read_tensor(tmp_path / "s.tsr") == 3.25
    empty = np.zeros((0, 4), dtype=np.float32)
    tsr.write_tensor(tmp_path / "e.tsr", empty)
    assert tsr.read_tensor(tmp_path / "e.tsr").shape == (0, 4)


def test_bundle_round_trip_and_byte_identity(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {
        "a/w": rng.standard_normal((4, 4)).astype(np.float32),
        "b": np.arange(6, dtype=np.int64),
    }
    p1, p2 = tmp_path / "a.tsrb", tmp_path / "b.tsrb"
    tsr.write_bundle(p1, tensors)
    loaded = tsr.read_bundle(p1)
    assert list(loaded) == ["a/w", "b"]
    for k in tensors:
        assert np.array_equal(loaded[k], tensors[k])
    tsr.write_bundle(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "x.tsr"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        tsr.read_tensor(path)


def test_truncation_rejected(tmp_path):
    path = tmp_path / "x.tsr"
    tsr.write_tensor(path, np.ones((4, 4), dtype=np.float32))
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        tsr.read_tensor(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "x.tsr"
    tsr.write_tensor(path, np.ones(3, dtype=np.float32))
    path.write_bytes(path.read_bytes() + b"\x01")
    with pytest.raises(CheckpointError, match="trailing"):
        tsr.read_tensor(path)


def test_unknown_version_rejected(tmp_path):
    path = tmp_path / "x.tsr"
    tsr.write_tensor(path, np.ones(3, dtype=np.float32))
    data = bytearray(path.read_bytes())
    data[4] = 99  # version little-endian low byte
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version"):
        tsr.read_tensor(path)
