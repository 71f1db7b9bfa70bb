import os
import struct
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deskstereo.errors import DataError, FormatError
from deskstereo.fileio import parse_pfm, read_pfm, read_ppm, write_pfm, write_ppm
from deskstereo.synthetic import generate


def test_smallest_pfm_layout(tmp_path):
    p = tmp_path / "one.pfm"
    write_pfm(np.array([[[3.5]]], np.float32), p)
    raw = p.read_bytes()
    assert raw == b"Pf\n1 1\n-1.0\n" + struct.pack("<f", 3.5)
    assert read_pfm(p).tolist() == [[[3.5]]]


def test_rows_are_stored_bottom_to_top(tmp_path):
    p = tmp_path / "rows.pfm"
    write_pfm(np.array([[[1.0, 2.0], [3.0, 4.0]]], np.float32), p)
    payload = p.read_bytes()[len(b"Pf\n2 2\n-1.0\n"):]
    assert struct.unpack("<4f", payload) == (3.0, 4.0, 1.0, 2.0)


def test_generated_disparity_round_trip_is_bit_exact(tmp_path):
    d = generate(128, 64, 3, 30, 4).disparity
    write_pfm(d, tmp_path / "d.pfm")
    assert read_pfm(tmp_path / "d.pfm").tobytes() == d.tobytes()


@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(width=32, allow_nan=False, allow_infinity=False)))
@settings(max_examples=60, deadline=None)
def test_round_trip_is_identity_on_finite_floats(field):
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "f.pfm")
        write_pfm(field[None], path)
        back = read_pfm(path)
    assert back.shape == (1,) + field.shape
    assert back.tobytes() == field.tobytes()


def test_big_endian_scale_is_byte_swapped():
    vals = np.array([[1.25, -2.0], [7.5, 0.0]], np.float32)  # top row first
    payload = vals[::-1].astype(">f4").tobytes()
    out = parse_pfm(b"Pf\n2 2\n1.0\n" + payload)
    assert out[0].tolist() == vals.tolist()


def test_color_pfm():
    rgb = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)  # H, W, C
    out = parse_pfm(b"PF\n3 2\n-1\n" + rgb[::-1].astype("<f4").tobytes())
    assert out.shape == (3, 2, 3)
    assert np.array_equal(out.transpose(1, 2, 0), rgb)


@pytest.mark.parametrize("buf,offset", [
    (b"P5\n1 1\n-1.0\n" + b"\0" * 4, 0),
    (b"Pf\n1 x\n-1.0\n" + b"\0" * 4, 3),
    (b"Pf\n1 1\nabc\n" + b"\0" * 4, 7),
    (b"Pf\n2 2\n-1.0\n" + b"\0" * 9, 21),
    (b"Pf\n2 2", 3),
])
def test_malformed_files_report_byte_offset(buf, offset):
    with pytest.raises(FormatError) as info:
        parse_pfm(buf)
    assert info.value.offset == offset
    assert f"byte offset {offset}" in str(info.value)


def test_write_rejects_non_finite(tmp_path):
    with pytest.raises(DataError):
        write_pfm(np.array([[np.nan]], np.float32), tmp_path / "x.pfm")


def test_ppm_round_trip_quantizes_to_8_bits(tmp_path):
    img = generate(64, 32, 1, 10, 0).left
    write_ppm(img, tmp_path / "a.ppm")
    back = read_ppm(tmp_path / "a.ppm")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-7
    write_ppm(back, tmp_path / "b.ppm")
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()


def test_ppm_with_comment(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
    img = read_ppm(p)
    assert img[:, 0, 0].tolist() == [1.0, 0.0, 0.0]
    assert img[:, 0, 1].tolist() == [0.0, 0.0, 1.0]
