import struct

import numpy as np
import pytest

from mslstm.errors import DataIOError, FormatError
from mslstm.tensorfile import MAGIC, read_tensor, write_tensor


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize(
    "shape", [(3,), (2, 3), (4, 1, 2), (2, 3, 1, 2), (2, 2, 1, 3, 3)]
)
def test_roundtrip_is_bit_identical(tmp_path, dtype, shape):
    rng = np.random.default_rng(1)
    arr = rng.standard_normal(shape).astype(dtype)
    path = tmp_path / "t.mslt"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.dtype == arr.dtype
    assert back.shape == arr.shape
    assert np.array_equal(back.view(np.uint8), arr.view(np.uint8))


def test_zero_size_dimension_accepted(tmp_path):
    arr = np.zeros((0, 3), dtype=np.float64)
    path = tmp_path / "empty.mslt"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.shape == (0, 3)


def test_bad_magic_reported(tmp_path):
    path = tmp_path / "bad.mslt"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FormatError, match="NOPE"):
        read_tensor(path)


def test_bad_version_reported(tmp_path):
    path = tmp_path / "v9.mslt"
    path.write_bytes(MAGIC + struct.pack("<IBB", 9, 0, 1) + struct.pack("<Q", 0))
    with pytest.raises(FormatError, match="9"):
        read_tensor(path)


def test_bad_dtype_code_reported(tmp_path):
    path = tmp_path / "d7.mslt"
    path.write_bytes(MAGIC + struct.pack("<IBB", 1, 7, 1) + struct.pack("<Q", 0))
    with pytest.raises(FormatError, match="7"):
        read_tensor(path)


def test_truncated_payload_reports_byte_counts(tmp_path):
    path = tmp_path / "cut.mslt"
    write_tensor(path, np.ones((4, 4), dtype=np.float64))
    whole = path.read_bytes()
    path.write_bytes(whole[:-9])
    with pytest.raises(DataIOError, match="128.*119"):
        read_tensor(path)


def test_nonfinite_write_rejected(tmp_path):
    with pytest.raises(FormatError):
        write_tensor(tmp_path / "nan.mslt", np.array([1.0, np.nan]))


def test_rank_limit(tmp_path):
    with pytest.raises(FormatError):
        write_tensor(tmp_path / "r6.mslt", np.zeros((1, 1, 1, 1, 1, 1)))


def test_unwritable_path_raises_io_error(tmp_path):
    with pytest.raises(DataIOError):
        write_tensor(tmp_path / "no" / "such" / "dir.mslt", np.zeros(3))
