import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from hyperstep.io import (SNAPSHOT_MAGIC, SnapshotError, read_long_csv, read_snapshot,
                          write_long_csv, write_manifest, write_snapshot)


@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=4, max_side=5)))
def test_snapshot_round_trip(tmp_path_factory, a):
    p = tmp_path_factory.mktemp("snap") / "a.snap"
    write_snapshot(p, a)
    b = read_snapshot(p)
    assert b.shape == a.shape
    assert np.array_equal(a, b, equal_nan=True)


def test_snapshot_layout(tmp_path):
    p = write_snapshot(tmp_path / "a.snap", np.arange(6.0).reshape(2, 3))
    data = p.read_bytes()
    assert len(SNAPSHOT_MAGIC) == 16 and data[:16] == SNAPSHOT_MAGIC
    assert struct.unpack_from("<II", data, 16) == (1, 2)
    assert struct.unpack_from("<2Q", data, 24) == (2, 3)
    assert struct.unpack_from("<6d", data, 40) == (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


def test_snapshot_rejects_corruption(tmp_path):
    p = write_snapshot(tmp_path / "a.snap", np.ones(3))
    p.write_bytes(b"X" + p.read_bytes()[1:])
    with pytest.raises(SnapshotError):
        read_snapshot(p)
    p = write_snapshot(tmp_path / "b.snap", np.ones(3))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(SnapshotError):
        read_snapshot(p)


def test_csv_is_long_format_with_units_and_exact_floats(tmp_path):
    rows = [(0.1, 1, 1 / 3), (0.2, 2, 2 / 3)]
    p = write_long_csv(tmp_path / "a.csv", ["t", "j", "U"], rows, {"t": "s"})
    first = p.read_text().splitlines()[0]
    assert first.startswith("# units:") and "t [s]" in first
    cols, back = read_long_csv(p)
    assert cols == ["t", "j", "U"]
    assert float(back[0][2]) == 1 / 3 and back[1][1] == "2"


def test_manifest_lists_method_and_digests(tmp_path):
    f = write_long_csv(tmp_path / "a.csv", ["t"], [(0.0,)])
    import json
    man = json.loads(write_manifest(tmp_path, "abc", "ps", [f]).read_text())
    assert man["kernel_method"] == "ps" and man["config_sha256"] == "abc"
    assert set(man["files"]) == {"a.csv"}
    assert "numpy" in man["versions"]
