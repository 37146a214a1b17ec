import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from supertoken import io
from supertoken.classifier import init_params, param_shapes
from supertoken.errors import CheckpointError, ParseError
from supertoken.hsi import HsiCube, LabelMap


def test_cube_round_trip(tmp_path, rng):
    v = rng.normal(size=(3, 5, 4)).astype(np.float32).astype(np.float64)
    io.write_cube(tmp_path / "a.hsic", HsiCube(v))
    np.testing.assert_array_equal(io.read_cube(tmp_path / "a.hsic").values, v)


def test_labels_round_trip(tmp_path, rng):
    lab = LabelMap(rng.integers(0, 6, size=(4, 7)), 5)
    io.write_labels(tmp_path / "a.hsil", lab)
    back = io.read_labels(tmp_path / "a.hsil")
    np.testing.assert_array_equal(back.labels, lab.labels)
    assert back.class_count == 5


def test_cube_header_layout():
    data = io.encode_cube(np.zeros((2, 3, 4)))
    assert data[:4] == b"HSIC"
    assert struct.unpack_from("<HIII", data, 4) == (1, 2, 3, 4)
    assert len(data) == 18 + 2 * 3 * 4 * 4


def test_label_header_layout():
    data = io.encode_labels((np.array([[0, 2]]), 7))
    assert data[:4] == b"HSIL"
    assert struct.unpack_from("<HIIH", data, 4) == (1, 1, 2, 7)
    assert struct.unpack_from("<2H", data, 16) == (0, 2)


def test_truncated_header_offset():
    with pytest.raises(ParseError) as err:
        io.decode_cube(b"HSIC\x01\x00")
    assert err.value.offset == 6


def test_bad_magic_offset():
    data = bytearray(io.encode_cube(np.zeros((1, 1, 2))))
    data[:4] = b"XXXX"
    with pytest.raises(ParseError) as err:
        io.decode_cube(bytes(data))
    assert err.value.offset == 0


def test_bad_version_offset():
    data = bytearray(io.encode_labels((np.zeros((1, 1), int), 1)))
    data[4] = 9
    with pytest.raises(ParseError) as err:
        io.decode_labels(bytes(data))
    assert err.value.offset == 4


def test_short_payload_offset():
    data = io.encode_cube(np.zeros((2, 2, 2)))
    with pytest.raises(ParseError) as err:
        io.decode_cube(data[:-3])
    assert err.value.offset == len(data) - 3


def test_non_finite_value_offset():
    v = np.zeros((1, 2, 2))
    v[0, 1, 0] = np.nan
    with pytest.raises(ParseError) as err:
        io.decode_cube(io.encode_cube(v))
    assert err.value.offset == 18 + 4 * 2


def test_label_over_class_count_offset():
    data = io.encode_labels((np.array([[1, 5, 1]]), 5))
    bad = bytearray(data)
    struct.pack_into("<H", bad, 14, 3)
    with pytest.raises(ParseError) as err:
        io.decode_labels(bytes(bad))
    assert err.value.offset == 16 + 2


def test_matrix_round_trip(tmp_path, rng):
    m = rng.normal(size=(6, 3)).astype(np.float32)
    io.write_matrix(tmp_path / "t.hsic", m)
    np.testing.assert_array_equal(io.read_matrix(tmp_path / "t.hsic"), m)


def test_checkpoint_round_trip(tmp_path):
    p = {k: v.astype(np.float32).astype(np.float64) for k, v in init_params(4, 3, seed=2).items()}
    io.write_checkpoint(tmp_path / "c.hsck", p)
    back = io.read_checkpoint(tmp_path / "c.hsck", param_shapes(4, 3))
    assert list(back) == list(p)
    for k in p:
        np.testing.assert_array_equal(back[k], p[k])


def test_checkpoint_shape_mismatch(tmp_path):
    io.write_checkpoint(tmp_path / "c.hsck", init_params(4, 3))
    with pytest.raises(CheckpointError):
        io.read_checkpoint(tmp_path / "c.hsck", param_shapes(4, 2))


def test_truncated_checkpoint_table():
    data = io.encode_checkpoint({"w": np.zeros((2, 2))})
    with pytest.raises(ParseError) as err:
        io.decode_checkpoint(data[:12])
    assert err.value.offset == 10


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(2, 5)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_cube_bytes_round_trip(values):
    data = io.encode_cube(values)
    assert io.encode_cube(io.decode_cube(data)) == data


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 40)))
def test_label_bytes_round_trip(lab):
    data = io.encode_labels((lab, 40))
    np.testing.assert_array_equal(io.decode_labels(data).labels, lab)
