import numpy as np
import pytest

from casvsr.mvt import MvtFormatError, read_mvt, write_mvt


def test_roundtrip_bit_exact(tmp_path, rng):
    arr = rng.standard_normal((3, 4, 5)).astype(np.float32)
    path = tmp_path / "t.mvt"
    write_mvt(path, arr)
    back = read_mvt(path)
    assert back.shape == arr.shape
    assert np.array_equal(back, arr)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.mvt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(MvtFormatError, match="magic"):
        read_mvt(path)


def test_truncated_payload(tmp_path, rng):
    arr = rng.standard_normal((2, 3)).astype(np.float32)
    path = tmp_path / "t.mvt"
    write_mvt(path, arr)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(MvtFormatError, match="payload"):
        read_mvt(path)


def test_scalar_rank_zero(tmp_path):
    path = tmp_path / "s.mvt"
    write_mvt(path, np.float32(2.5))
    assert read_mvt(path) == np.float32(2.5)
