"""EMBM: an out-of-core binary format for n x d float32 embedding matrices.

Layout (all little-endian):

    bytes  0-3   magic "EMBM"
    bytes  4-7   version   u32  (= 1)
    bytes  8-15  n rows    u64
    bytes 16-19  d columns u32
    byte  20     dtype     u8   (0 = float32 LE)
    bytes 21-31  zero padding

followed by n*d float32 values, row-major.  A sidecar ``<path>.ids`` text
file maps row ordinals to post ids, one ``row<TAB>post_id`` line per row.

Writers flush in checkpoints: data rows are appended immediately, but the
header row count (and the matching sidecar lines) only advance at
``flush()``, so a crashed writer leaves a file whose header still describes
a consistent prefix.  Readers serve rows by memory mapping; random access
is O(1) per row and never loads the whole matrix.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMBM"
VERSION = 1
HEADER_SIZE = 32
DTYPE_FLOAT32 = 0

_HEADER = struct.Struct("<4sIQIB11x")


class StoreError(Exception):
    pass


class FormatMismatch(StoreError):
    pass


class TruncatedFile(StoreError):
    pass


class DimensionMismatch(StoreError):
    pass


class IndexOutOfRange(StoreError):
    pass


class HandleClosed(StoreError):
    pass


class ZeroRow(StoreError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"row {index} has zero L2 norm")


class IdIndexError(StoreError):
    pass


def _pack_header(n: int, d: int, dtype: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, n, d, dtype)


class MatrixWriter:
    """Single-writer append handle for a new or resumed EMBM file."""

    def __init__(self, path: str | Path, d: int, dtype: int = DTYPE_FLOAT32):
        if d < 2:
            raise DimensionMismatch(f"d must be >= 2, got {d}")
        if dtype != DTYPE_FLOAT32:
            raise FormatMismatch(f"unsupported dtype code {dtype}")
        self.path = Path(path)
        self.ids_path = Path(str(path) + ".ids")
        self.d = d
        self.dtype = dtype
        self._n_flushed = 0
        self._pending_ids: list[str] = []
        self._fh = open(self.path, "wb")
        self._fh.write(_pack_header(0, d, dtype))
        self._ids_fh = open(self.ids_path, "w", encoding="utf-8")
        self._closed = False

    @property
    def n(self) -> int:
        """Rows appended so far, flushed or not."""
        self._check_open()
        return self._n_flushed + len(self._pending_ids)

    def _check_open(self):
        if self._closed:
            raise HandleClosed("writer is closed")

    def append_row(self, vector, post_id: str) -> None:
        self._check_open()
        row = np.asarray(vector)
        if row.ndim != 1 or row.shape[0] != self.d:
            raise DimensionMismatch(
                f"expected a length-{self.d} vector, got shape {row.shape}"
            )
        self._fh.write(row.astype("<f4", copy=False).tobytes())
        self._pending_ids.append(post_id)

    def flush(self) -> None:
        """Checkpoint: advance the header row count to cover appended rows."""
        self._check_open()
        if self._pending_ids:
            base = self._n_flushed
            for i, post_id in enumerate(self._pending_ids):
                self._ids_fh.write(f"{base + i}\t{post_id}\n")
            self._n_flushed += len(self._pending_ids)
            self._pending_ids.clear()
        self._fh.flush()
        self._fh.seek(8)
        self._fh.write(struct.pack("<Q", self._n_flushed))
        self._fh.seek(0, os.SEEK_END)
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._ids_fh.flush()
        os.fsync(self._ids_fh.fileno())

    def close(self) -> None:
        if self._closed:
            return
        self.flush()
        self._fh.close()
        self._ids_fh.close()
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def create_matrix(path: str | Path, d: int, dtype: int = DTYPE_FLOAT32) -> MatrixWriter:
    return MatrixWriter(path, d, dtype)


def resume_matrix(path: str | Path) -> MatrixWriter:
    """Reopen an existing EMBM file for appending after its checkpoint.

    Data beyond the last flushed row (a torn write) is discarded.  Returns
    a writer positioned after row ``header.n``; the caller is responsible
    for knowing which post ids are already present (see ``read_ids``).
    """
    path = Path(path)
    n, d, dtype = _read_header(path)
    ids = read_ids(Path(str(path) + ".ids"))
    if len(ids) != n:
        raise IdIndexError(
            f"{path}.ids has {len(ids)} entries but header says n={n}"
        )
    writer = MatrixWriter.__new__(MatrixWriter)
    writer.path = path
    writer.ids_path = Path(str(path) + ".ids")
    writer.d = d
    writer.dtype = dtype
    writer._n_flushed = n
    writer._pending_ids = []
    writer._closed = False
    writer._fh = open(path, "r+b")
    writer._fh.truncate(HEADER_SIZE + n * d * 4)
    writer._fh.seek(0, os.SEEK_END)
    writer._ids_fh = open(writer.ids_path, "a", encoding="utf-8")
    return writer


def _read_header(path: Path) -> tuple[int, int, int]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read(HEADER_SIZE)
    except OSError as exc:
        raise FormatMismatch(f"{path}: {exc}") from None
    if len(raw) < HEADER_SIZE:
        raise TruncatedFile(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, n, d, dtype = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatMismatch(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatMismatch(f"{path}: unsupported version {version}")
    if dtype != DTYPE_FLOAT32:
        raise FormatMismatch(f"{path}: unsupported dtype code {dtype}")
    return n, d, dtype


class MatrixHandle:
    """Read-only view over a sealed EMBM file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.ids_path = Path(str(path) + ".ids")
        self.n, self.d, self.dtype = _read_header(self.path)
        expected = HEADER_SIZE + self.n * self.d * 4
        actual = self.path.stat().st_size
        if actual != expected:
            raise TruncatedFile(
                f"{self.path}: size {actual} inconsistent with header "
                f"(expected {expected} for n={self.n}, d={self.d})"
            )
        if self.n > 0:
            self._rows = np.memmap(
                self.path, dtype="<f4", mode="r", offset=HEADER_SIZE,
                shape=(self.n, self.d),
            )
        else:
            self._rows = np.empty((0, self.d), dtype="<f4")
        self._ids: list[str] | None = None

    @property
    def rows(self) -> np.ndarray:
        """The full matrix as a memory-mapped (n, d) float32 array."""
        return self._rows

    @property
    def ids(self) -> list[str]:
        """Row-aligned post ids from the sidecar; validated on first use."""
        if self._ids is None:
            ids = read_ids(self.ids_path)
            if len(ids) != self.n:
                raise IdIndexError(
                    f"{self.ids_path}: {len(ids)} entries for n={self.n} rows"
                )
            if len(set(ids)) != len(ids):
                raise IdIndexError(f"{self.ids_path}: duplicate post ids")
            self._ids = ids
        return self._ids

    def get_row(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n:
            raise IndexOutOfRange(f"row {i} out of range for n={self.n}")
        return np.array(self._rows[i])

    def batch_iter(self, batch_size: int):
        """Yield contiguous row blocks covering 0..n-1 exactly once, in order."""
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for start in range(0, self.n, batch_size):
            yield self._rows[start : start + batch_size]

    def __len__(self) -> int:
        return self.n


def open_matrix(path: str | Path) -> MatrixHandle:
    return MatrixHandle(path)


def read_ids(ids_path: str | Path) -> list[str]:
    """Parse a sidecar id index, checking row ordinals are 0..n-1 in order."""
    ids_path = Path(ids_path)
    if not ids_path.exists():
        raise IdIndexError(f"id sidecar not found: {ids_path}")
    ids: list[str] = []
    with open(ids_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                continue
            row_str, sep, post_id = line.partition("\t")
            if not sep:
                raise IdIndexError(f"{ids_path}:{lineno + 1}: missing tab separator")
            try:
                row = int(row_str)
            except ValueError:
                raise IdIndexError(f"{ids_path}:{lineno + 1}: bad row index {row_str!r}") from None
            if row != len(ids):
                raise IdIndexError(
                    f"{ids_path}:{lineno + 1}: row {row} out of order (expected {len(ids)})"
                )
            ids.append(post_id)
    return ids


def normalize_rows(
    handle: MatrixHandle, out_path: str | Path, batch_size: int = 8192
) -> MatrixHandle:
    """Write a new matrix whose rows are L2-normalized copies of the input.

    Raises ZeroRow on the first zero-norm input row.
    """
    with create_matrix(out_path, handle.d, handle.dtype) as writer:
        ids = handle.ids
        start = 0
        for block in handle.batch_iter(batch_size):
            norms = np.linalg.norm(block.astype(np.float64), axis=1)
            zero = np.flatnonzero(norms == 0.0)
            if zero.size:
                raise ZeroRow(start + int(zero[0]))
            out = block.astype(np.float64) / norms[:, None]
            for j in range(block.shape[0]):
                writer.append_row(out[j].astype("<f4"), ids[start + j])
            start += block.shape[0]
    return open_matrix(out_path)
