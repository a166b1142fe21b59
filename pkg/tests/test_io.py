import struct

import numpy as np
import pytest

from hope.errors import FormatError
from hope.io import read_cloud, read_csv_cloud, read_hpc, read_json, write_csv_cloud, write_hpc, write_json


def test_hpc_roundtrip_is_float32(tmp_path):
    pts = np.random.default_rng(0).standard_normal((50, 16))
    write_hpc(tmp_path / "a.hpc", pts)
    back = read_cloud(tmp_path / "a.hpc").points
    np.testing.assert_array_equal(back, pts.astype(np.float32).astype(np.float64))


def test_hpc_header_layout(tmp_path):
    write_hpc(tmp_path / "a.hpc", np.zeros((3, 2)))
    raw = (tmp_path / "a.hpc").read_bytes()
    assert struct.unpack("<4sII", raw[:12]) == (b"HPC1", 3, 2)
    assert len(raw) == 12 + 3 * 2 * 4


@pytest.mark.parametrize(
    "blob, msg",
    [
        (b"HP", "truncated header"),
        (struct.pack("<4sII", b"XXXX", 1, 1) + b"\0" * 4, "bad magic"),
        (struct.pack("<4sII", b"HPC1", 2, 3) + b"\0" * 4, "expected"),
    ],
)
def test_hpc_rejects_malformed(tmp_path, blob, msg):
    (tmp_path / "bad.hpc").write_bytes(blob)
    with pytest.raises(FormatError, match=msg):
        read_hpc(tmp_path / "bad.hpc")


def test_csv_roundtrip(tmp_path):
    pts = np.random.default_rng(1).standard_normal((20, 3))
    write_csv_cloud(tmp_path / "a.csv", pts)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "c0,c1,c2"
    np.testing.assert_allclose(read_cloud(tmp_path / "a.csv").points, pts, rtol=1e-15)


@pytest.mark.parametrize(
    "text, msg",
    [("", "empty CSV"), ("x,y\n1,2\n", "header"), ("c0,c1\n1,abc\n", "could not convert"), ("c0,c1\n1,2,3\n", "width")],
)
def test_csv_rejects_malformed(tmp_path, text, msg):
    (tmp_path / "bad.csv").write_text(text)
    with pytest.raises(FormatError, match=msg):
        read_csv_cloud(tmp_path / "bad.csv")


def test_json_helpers(tmp_path):
    write_json(tmp_path / "a.json", {"x": [1, 2]})
    assert read_json(tmp_path / "a.json") == {"x": [1, 2]}
    (tmp_path / "b.json").write_text("{oops")
    with pytest.raises(FormatError, match="invalid JSON"):
        read_json(tmp_path / "b.json")


def test_missing_file_is_oserror(tmp_path):
    with pytest.raises(OSError):
        read_cloud(tmp_path / "nope.hpc")
