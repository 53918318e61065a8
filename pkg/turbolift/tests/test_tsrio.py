import numpy as np
import pytest

from turbolift.errors import FormatError
from turbolift.tsrio import read_tensor, write_tensor


def test_float32_round_trip(tmp_path):
    arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4) / 7.0
    write_tensor(tmp_path / "a.tsr", arr)
    back = read_tensor(tmp_path / "a.tsr")
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)


def test_uint8_round_trip(tmp_path):
    arr = (np.arange(64, dtype=np.uint8) % 2).reshape(8, 8)
    write_tensor(tmp_path / "m.tsr", arr)
    back = read_tensor(tmp_path / "m.tsr")
    assert back.dtype == np.uint8
    assert np.array_equal(back, arr)


def test_zero_dim_round_trip(tmp_path):
    write_tensor(tmp_path / "s.tsr", np.float32(3.5))
    back = read_tensor(tmp_path / "s.tsr")
    assert back.shape == ()
    assert back == np.float32(3.5)


def test_rejects_other_dtypes(tmp_path):
    with pytest.raises(FormatError):
        write_tensor(tmp_path / "d.tsr", np.zeros(3, dtype=np.float64))


def test_rejects_bad_magic(tmp_path):
    (tmp_path / "x.tsr").write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "x.tsr")


def test_rejects_truncated_payload(tmp_path):
    write_tensor(tmp_path / "t.tsr", np.ones((4, 4), dtype=np.float32))
    blob = (tmp_path / "t.tsr").read_bytes()
    (tmp_path / "t.tsr").write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "t.tsr")


def test_reads_suite_tensors(tiny_suite):
    import json

    manifest = json.loads((tiny_suite / "manifest.json").read_text())
    entry = manifest["entries"][0]
    image = read_tensor(tiny_suite / entry["image"])
    mask = read_tensor(tiny_suite / entry["mask"])
    assert image.dtype == np.float32 and image.shape == (48, 48)
    assert mask.dtype == np.uint8 and set(np.unique(mask)) <= {0, 1}
