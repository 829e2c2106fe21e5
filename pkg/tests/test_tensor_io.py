import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from s4mc.tensor_core import IGNORE
from s4mc.tensor_io import (
    DTYPE_F32,
    DTYPE_U16,
    TensorFormatError,
    decode_tensor,
    encode_tensor,
    load_any,
    load_float_tensor,
    load_label_mask,
    save_float_tensor,
    save_label_mask,
)


def test_header_layout_is_little_endian():
    blob = encode_tensor(np.zeros((2, 3), dtype=np.float32), DTYPE_F32)
    assert blob[:4] == b"S4MC"
    assert struct.unpack("<HBB", blob[4:8]) == (1, 0, 2)
    assert struct.unpack("<2I", blob[8:16]) == (2, 3)
    assert len(blob) == 16 + 6 * 4


def test_payload_is_row_major():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    blob = encode_tensor(arr, DTYPE_F32)
    assert np.frombuffer(blob[16:], dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5), elements=st.floats(-1e3, 1e3, width=32)))
def test_float_roundtrip(arr):
    out, code = decode_tensor(encode_tensor(arr, DTYPE_F32))
    assert code == DTYPE_F32
    np.testing.assert_array_equal(out, arr)


def test_label_mask_roundtrip_keeps_ignore(tmp_path):
    mask = np.array([[0, 1, IGNORE], [4, IGNORE, 2]])
    save_label_mask(tmp_path / "m.s4t", mask)
    raw = (tmp_path / "m.s4t").read_bytes()
    assert raw[6] == DTYPE_U16
    assert np.frombuffer(raw[16:], dtype="<u2")[2] == 0xFFFF
    np.testing.assert_array_equal(load_label_mask(tmp_path / "m.s4t"), mask)
    np.testing.assert_array_equal(load_any(tmp_path / "m.s4t")[0], mask)


def test_float_file_roundtrip(tmp_path):
    arr = np.random.default_rng(0).random((3, 4, 2)).astype(np.float32)
    save_float_tensor(tmp_path / "p.s4t", arr)
    np.testing.assert_array_equal(load_float_tensor(tmp_path / "p.s4t"), arr)


def test_wrong_kind_is_reported(tmp_path):
    save_float_tensor(tmp_path / "p.s4t", np.zeros((2, 2)))
    with pytest.raises(TensorFormatError):
        load_label_mask(tmp_path / "p.s4t")


@pytest.mark.parametrize(
    "blob",
    [b"", b"XXXX\x01\x00\x00\x00", b"S4MC\x02\x00\x00\x01\x01\x00\x00\x00", b"S4MC\x01\x00\x07\x00", b"S4MC\x01\x00\x00\x01\x02\x00\x00\x00\x00"],
)
def test_malformed_blobs(blob):
    with pytest.raises(TensorFormatError):
        decode_tensor(blob)


def test_unstorable_labels():
    with pytest.raises(ValueError):
        save_label_mask("unused", np.array([-5]))
