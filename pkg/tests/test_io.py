import struct

import numpy as np
import pytest

from flowinpaint import io
from flowinpaint.denoiser import VideoDenoiser


def test_ten_round_trip_and_layout(tmp_path, rng):
    a = rng.standard_normal((2, 3, 4)).astype(np.float32)
    p = tmp_path / "a.ten"
    io.write_ten(p, a)
    raw = p.read_bytes()
    assert raw[:4] == b"TEN1"
    assert struct.unpack("<4I", raw[4:20]) == (3, 2, 3, 4)
    np.testing.assert_array_equal(np.frombuffer(raw[20:], "<f4").reshape(a.shape), a)
    np.testing.assert_array_equal(io.read_ten(p), a)


def test_ten_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "x.ten"
    p.write_bytes(b"NOPE" + b"\0" * 12)
    with pytest.raises(io.FormatError):
        io.read_ten(p)
    io.write_ten(p, np.ones((4, 4), np.float32))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(io.FormatError):
        io.read_ten(p)


def test_flo2_round_trip_and_header(tmp_path, rng):
    f = rng.standard_normal((3, 2, 5, 6)).astype(np.float32)
    b = rng.standard_normal((3, 2, 5, 6)).astype(np.float32)
    p = tmp_path / "c.flo2"
    io.write_flo2(p, f, b)
    raw = p.read_bytes()
    assert raw[:4] == b"FLO2" and struct.unpack("<3I", raw[4:16]) == (3, 5, 6)
    data = np.frombuffer(raw[16:], "<f4")
    np.testing.assert_array_equal(data[:f.size].reshape(f.shape), f)
    f2, b2 = io.read_flo2(p)
    np.testing.assert_array_equal(f2, f)
    np.testing.assert_array_equal(b2, b)


def test_ppm_round_trip_quantised(tmp_path, rng):
    x = rng.uniform(-1, 1, (3, 4, 5)).astype(np.float32)
    p = tmp_path / "f.ppm"
    io.write_ppm(p, x)
    assert p.read_bytes().startswith(b"P6\n5 4\n255\n")
    back = io.read_ppm(p)
    assert back.shape == x.shape and np.abs(back - x).max() <= 1 / 127.5 + 1e-6
    with pytest.raises(io.FormatError):
        io.write_ppm(p, x[:1])


def test_checkpoint_round_trip(tmp_path):
    m1, m2 = VideoDenoiser(seed=1), VideoDenoiser(seed=2)
    io.save_checkpoint(tmp_path / "ck", m1, {"m.0": np.ones(3, np.float32)}, {"stage": 1})
    meta = io.load_checkpoint(tmp_path / "ck", m2)
    assert meta["stage"] == "1"
    for (n1, p1), (n2, p2) in zip(m1.named_parameters(), m2.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)
    np.testing.assert_array_equal(io.load_state_arrays(tmp_path / "ck")["m.0"], np.ones(3))
    manifest = (tmp_path / "ck" / "manifest.txt").read_text().splitlines()
    assert all(len(line.split("\t")) == 3 for line in manifest)


def test_checkpoint_missing_path_named(tmp_path):
    with pytest.raises(FileNotFoundError, match="nowhere"):
        io.load_checkpoint(tmp_path / "nowhere", VideoDenoiser())
