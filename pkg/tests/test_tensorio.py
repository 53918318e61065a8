import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfrec import tensorio
from perfrec.errors import FormatError


def test_round_trip_float32(tmp_path):
    x = np.arange(12, dtype=np.float32).reshape(3, 4) / 7.0
    path = tmp_path / "a.tsr"
    tensorio.write_tensor(path, x)
    y = tensorio.read_tensor(path)
    assert y.dtype == np.float32
    assert y.shape == (3, 4)
    assert np.array_equal(x, y)
    # bit-exact round trip
    assert x.tobytes() == y.tobytes()


def test_round_trip_uint8(tmp_path):
    x = np.array([[0, 1], [255, 7]], dtype=np.uint8)
    path = tmp_path / "b.tsr"
    tensorio.write_tensor(path, x)
    y = tensorio.read_tensor(path)
    assert y.dtype == np.uint8
    assert np.array_equal(x, y)


def test_zero_dim_tensor(tmp_path):
    # ndim=0: product over empty dims is 1, payload exactly one element
    x = np.float32(3.5)
    path = tmp_path / "scalar.tsr"
    tensorio.write_tensor(path, x)
    raw = path.read_bytes()
    assert len(raw) == 4 + 1 + 1 + 0 + 4
    y = tensorio.read_tensor(path)
    assert y.shape == ()
    assert y == np.float32(3.5)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.tsr"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(FormatError):
        tensorio.read_tensor(path)


def test_truncated_payload(tmp_path):
    x = np.zeros((4, 4), dtype=np.float32)
    path = tmp_path / "t.tsr"
    tensorio.write_tensor(path, x)
    blob = path.read_bytes()
    path.write_bytes(blob[:-3])
    with pytest.raises(FormatError):
        tensorio.read_tensor(path)


def test_unknown_dtype_code(tmp_path):
    path = tmp_path / "u.tsr"
    path.write_bytes(b"TSR1" + struct.pack("<BB", 9, 1) + struct.pack("<Q", 1) + b"\x00")
    with pytest.raises(FormatError):
        tensorio.read_tensor(path)


def test_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(FormatError):
        tensorio.write_tensor(tmp_path / "d.tsr", np.zeros(3, dtype=np.float64))


@settings(max_examples=50, deadline=None)
@given(
    shape=st.lists(st.integers(0, 5), min_size=0, max_size=3),
    which=st.sampled_from(["float32", "uint8"]),
    seed=st.integers(0, 2**31 - 1),
)
def test_round_trip_property(shape, which, seed):
    rng = np.random.default_rng(seed)
    if which == "float32":
        x = rng.normal(size=shape).astype(np.float32)
    else:
        x = rng.integers(0, 256, size=shape).astype(np.uint8)
    # hypothesis reruns the body; a per-example temp dir replaces tmp_path
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "p.tsr"
        tensorio.write_tensor(path, x)
        y = tensorio.read_tensor(path)
    assert y.dtype == x.dtype and y.shape == x.shape
    assert x.tobytes() == y.tobytes()


def test_json_writes_are_deterministic(tmp_path):
    obj = {"b": [1, 2, 3], "a": {"z": 1.5, "y": None}}
    p1, p2 = tmp_path / "1.json", tmp_path / "2.json"
    tensorio.write_json(p1, obj)
    tensorio.write_json(p2, {"a": {"y": None, "z": 1.5}, "b": [1, 2, 3]})
    assert p1.read_bytes() == p2.read_bytes()
    assert tensorio.read_json(p1) == obj


def test_csv_round_trip(tmp_path):
    path = tmp_path / "m.csv"
    rows = [["a", "0.5"], ["b", "1.0"]]
    tensorio.write_csv(path, ["name", "value"], rows)
    header, back = tensorio.read_csv(path)
    assert header == ["name", "value"]
    assert back == rows
