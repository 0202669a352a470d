"""EMBM binary format: header layout, round-trips, resume, validation."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vecfold import store


def write_matrix(path, rows, ids=None):
    rows = np.asarray(rows, dtype=np.float32)
    ids = ids or [f"id-{i}" for i in range(rows.shape[0])]
    with store.create_matrix(path, rows.shape[1]) as w:
        for vec, pid in zip(rows, ids):
            w.append_row(vec, pid)
    return store.open_matrix(path)


def test_header_layout_golden_bytes(tmp_path):
    """The 32-byte header is pinned field by field, not via the writer."""
    path = tmp_path / "m.embm"
    write_matrix(path, np.zeros((3, 5), dtype=np.float32))
    raw = path.read_bytes()
    assert raw[0:4] == b"EMBM"
    assert struct.unpack("<I", raw[4:8])[0] == 1      # version
    assert struct.unpack("<Q", raw[8:16])[0] == 3     # n
    assert struct.unpack("<I", raw[16:20])[0] == 5    # d
    assert raw[20] == 0                               # dtype float32
    assert raw[21:32] == b"\x00" * 11                 # padding
    assert len(raw) == 32 + 3 * 5 * 4


def test_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(17, 9)).astype(np.float32)
    handle = write_matrix(tmp_path / "m.embm", rows)
    assert handle.n == 17 and handle.d == 9
    assert np.asarray(handle.rows).tobytes() == rows.tobytes()
    for i in range(17):
        assert handle.get_row(i).tobytes() == rows[i].tobytes()


def test_ids_sidecar_format_and_lookup(tmp_path):
    path = tmp_path / "m.embm"
    write_matrix(path, np.zeros((2, 3), dtype=np.float32), ids=["alpha", "beta"])
    lines = (tmp_path / "m.embm.ids").read_text().splitlines()
    assert lines == ["0\talpha", "1\tbeta"]
    assert store.open_matrix(path).ids == ["alpha", "beta"]


def test_empty_matrix_is_valid(tmp_path):
    path = tmp_path / "m.embm"
    with store.create_matrix(path, 4):
        pass
    handle = store.open_matrix(path)
    assert handle.n == 0
    assert list(handle.batch_iter(8)) == []


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "m.embm"
    write_matrix(path, np.zeros((1, 2), dtype=np.float32))
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(store.FormatMismatch):
        store.open_matrix(path)


def test_bad_version_and_dtype_rejected(tmp_path):
    path = tmp_path / "m.embm"
    write_matrix(path, np.zeros((1, 2), dtype=np.float32))
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(store.FormatMismatch):
        store.open_matrix(path)
    raw[4:8] = struct.pack("<I", 1)
    raw[20] = 7
    path.write_bytes(bytes(raw))
    with pytest.raises(store.FormatMismatch):
        store.open_matrix(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "m.embm"
    write_matrix(path, np.ones((4, 3), dtype=np.float32))
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(store.TruncatedFile):
        store.open_matrix(path)
    path.write_bytes(raw + b"\x00\x00")
    with pytest.raises(store.TruncatedFile):
        store.open_matrix(path)
    path.write_bytes(raw[:20])
    with pytest.raises(store.TruncatedFile):
        store.open_matrix(path)


def test_row_index_bounds(tmp_path):
    handle = write_matrix(tmp_path / "m.embm", np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(store.IndexOutOfRange):
        handle.get_row(2)
    with pytest.raises(store.IndexOutOfRange):
        handle.get_row(-1)


def test_append_rejects_wrong_width(tmp_path):
    with store.create_matrix(tmp_path / "m.embm", 4) as w:
        with pytest.raises(store.DimensionMismatch):
            w.append_row(np.zeros(3, dtype=np.float32), "x")


def test_closed_writer_raises(tmp_path):
    w = store.create_matrix(tmp_path / "m.embm", 2)
    w.close()
    with pytest.raises(store.HandleClosed):
        w.append_row(np.zeros(2, dtype=np.float32), "x")


def test_flush_checkpoints_header(tmp_path):
    """Rows appended after the last flush are not covered by the header."""
    path = tmp_path / "m.embm"
    w = store.create_matrix(path, 2)
    w.append_row(np.array([1, 2], dtype=np.float32), "a")
    w.flush()
    w.append_row(np.array([3, 4], dtype=np.float32), "b")
    # no flush for row b; reopen sees only the checkpointed prefix
    w._fh.flush()
    raw = path.read_bytes()
    assert struct.unpack("<Q", raw[8:16])[0] == 1
    w.close()
    assert store.open_matrix(path).n == 2


def test_resume_after_torn_write(tmp_path):
    """Garbage past the checkpoint is discarded on resume."""
    path = tmp_path / "m.embm"
    w = store.create_matrix(path, 3)
    w.append_row(np.array([1, 2, 3], dtype=np.float32), "a")
    w.flush()
    w._fh.write(b"\xde\xad\xbe")  # torn partial row, never flushed
    w._fh.close()
    w._ids_fh.close()

    resumed = store.resume_matrix(path)
    assert resumed.n == 1
    resumed.append_row(np.array([4, 5, 6], dtype=np.float32), "b")
    resumed.close()

    handle = store.open_matrix(path)
    assert handle.n == 2
    assert handle.ids == ["a", "b"]
    assert np.allclose(handle.rows, [[1, 2, 3], [4, 5, 6]])


def test_resume_requires_consistent_sidecar(tmp_path):
    path = tmp_path / "m.embm"
    write_matrix(path, np.zeros((2, 2), dtype=np.float32))
    sidecar = tmp_path / "m.embm.ids"
    sidecar.write_text("0\tonly-one\n")
    with pytest.raises(store.IdIndexError):
        store.resume_matrix(path)


def test_read_ids_rejects_bad_ordinals(tmp_path):
    p = tmp_path / "x.ids"
    p.write_text("0\ta\n2\tb\n")
    with pytest.raises(store.IdIndexError):
        store.read_ids(p)
    p.write_text("0\ta\nnot-a-number\tb\n")
    with pytest.raises(store.IdIndexError):
        store.read_ids(p)
    p.write_text("0 a\n")
    with pytest.raises(store.IdIndexError):
        store.read_ids(p)


def test_duplicate_ids_rejected_on_access(tmp_path):
    path = tmp_path / "m.embm"
    write_matrix(path, np.zeros((2, 2), dtype=np.float32), ids=["same", "same"])
    with pytest.raises(store.IdIndexError):
        store.open_matrix(path).ids


def test_batch_iter_covers_rows_in_order(tmp_path):
    rows = np.arange(14, dtype=np.float32).reshape(7, 2)
    handle = write_matrix(tmp_path / "m.embm", rows)
    got = np.concatenate(list(handle.batch_iter(3)))
    assert np.array_equal(got, rows)
    sizes = [b.shape[0] for b in handle.batch_iter(3)]
    assert sizes == [3, 3, 1]


def test_normalize_rows(tmp_path):
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(10, 6)).astype(np.float32)
    handle = write_matrix(tmp_path / "m.embm", rows)
    normed = store.normalize_rows(handle, tmp_path / "n.embm")
    norms = np.linalg.norm(np.asarray(normed.rows, dtype=np.float64), axis=1)
    assert np.allclose(norms, 1.0, atol=1e-6)
    assert normed.ids == handle.ids


def test_normalize_rows_zero_row(tmp_path):
    rows = np.ones((3, 4), dtype=np.float32)
    rows[1] = 0.0
    handle = write_matrix(tmp_path / "m.embm", rows)
    with pytest.raises(store.ZeroRow) as exc:
        store.normalize_rows(handle, tmp_path / "n.embm")
    assert exc.value.index == 1


@settings(max_examples=60, deadline=None)
@given(
    data=hnp.arrays(
        dtype=np.float32,
        shape=hnp.array_shapes(min_dims=2, max_dims=2, min_side=2, max_side=12),
        elements=st.floats(
            min_value=-1e6, max_value=1e6, width=32, allow_nan=False
        ),
    )
)
def test_roundtrip_property(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("embm") / "m.embm"
    handle = write_matrix(path, data)
    assert np.asarray(handle.rows).tobytes() == data.tobytes()
    assert path.stat().st_size == 32 + data.shape[0] * data.shape[1] * 4
