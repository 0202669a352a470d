"""k-means over an embedding matrix: k-means++ seeding, Lloyd, mini-batch.

The metric is fixed to squared Euclidean distance (on unit-normalized rows
this orders identically to cosine).  All distance and centroid
accumulations run in double precision over contiguous row chunks, and
chunk partials combine in a fixed chunk order, so results are identical
for any worker count.  Ties in assignment break toward the lowest centroid
index.  Models are immutable after fitting.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 300
DEFAULT_RESTARTS = 5
DEFAULT_CHUNK = 8192

LABELS_MAGIC = b"KLBL"


class ClusterError(Exception):
    pass


class TooFewRows(ClusterError):
    pass


class NonFiniteData(ClusterError):
    pass


class DimensionMismatch(ClusterError):
    pass


@dataclass(frozen=True)
class KMeansModel:
    k: int
    centroids: np.ndarray          # (k, d) float64
    labels: np.ndarray             # (n,) uint32
    inertia: float
    iterations: int
    seed: int
    restarts: int = 1
    metric: str = "squared_euclidean"
    inertia_history: tuple[float, ...] = ()

    @property
    def d(self) -> int:
        return self.centroids.shape[1]


def _as_rows(matrix) -> np.ndarray:
    """Accept an ndarray or a store handle exposing ``.rows``."""
    rows = getattr(matrix, "rows", matrix)
    rows = np.asarray(rows)
    if rows.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {rows.shape}")
    return rows


def _chunk_ranges(n: int, chunk: int) -> list[tuple[int, int]]:
    return [(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def _map_chunks(fn, ranges, threads: int):
    """Run fn over chunk ranges, returning results in chunk order."""
    if threads <= 1 or len(ranges) <= 1:
        return [fn(r) for r in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, ranges))


def kmeans_pp_init(matrix, k: int, rng_seed: int) -> np.ndarray:
    """k-means++ seeding: first center uniform, then rows drawn with
    probability proportional to squared distance from the nearest chosen
    center.  Every center is an exact data row; reproducible per seed.
    """
    x = _as_rows(matrix)
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise TooFewRows(f"need at least k={k} rows, have {n}")
    rng = np.random.default_rng(rng_seed)

    indices = np.empty(k, dtype=np.int64)
    indices[0] = rng.integers(0, n)
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[indices[0]]

    xf = x.astype(np.float64, copy=False)
    d2 = np.sum((xf - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = rng.choice(n, p=d2 / total)
        else:
            # all remaining rows coincide with chosen centers
            unchosen = np.setdiff1d(np.arange(n), indices[:i])
            idx = unchosen[rng.integers(0, unchosen.size)]
        indices[i] = idx
        centers[i] = x[idx]
        d2 = np.minimum(d2, np.sum((xf - centers[i]) ** 2, axis=1))
    return centers


def _assignment_pass(x, centroids, chunk=DEFAULT_CHUNK, threads=1, want_sums=False):
    """One full pass: labels, per-row squared distances, optional per-cluster
    sums and counts.  Distances use the expanded double-precision form; the
    final reduction combines chunk partials in chunk order.
    """
    n = x.shape[0]
    k = centroids.shape[0]
    c = centroids.astype(np.float64, copy=False)
    c_sq = np.einsum("ij,ij->i", c, c)
    labels = np.empty(n, dtype=np.uint32)
    dist2 = np.empty(n, dtype=np.float64)

    def run(rng_pair):
        s, e = rng_pair
        block = np.asarray(x[s:e], dtype=np.float64)
        cross = block @ c.T
        d2 = np.einsum("ij,ij->i", block, block)[:, None] - 2.0 * cross + c_sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        lab = np.argmin(d2, axis=1)
        labels[s:e] = lab
        dist2[s:e] = np.take_along_axis(d2, lab[:, None], axis=1)[:, 0]
        if want_sums:
            onehot = np.zeros((e - s, k), dtype=np.float64)
            onehot[np.arange(e - s), lab] = 1.0
            return onehot.T @ block, np.bincount(lab, minlength=k).astype(np.int64)
        return None

    partials = _map_chunks(run, _chunk_ranges(n, chunk), threads)
    if want_sums:
        sums = np.zeros((k, x.shape[1]), dtype=np.float64)
        counts = np.zeros(k, dtype=np.int64)
        for part_sums, part_counts in partials:  # fixed chunk order
            sums += part_sums
            counts += part_counts
        return labels, dist2, sums, counts
    return labels, dist2


def assign(vectors, centroids, chunk: int = DEFAULT_CHUNK, threads: int = 1):
    """Nearest-centroid labels plus Euclidean (not squared) distances."""
    x = _as_rows(vectors)
    c = np.asarray(centroids, dtype=np.float64)
    if x.shape[1] != c.shape[1]:
        raise DimensionMismatch(f"row width {x.shape[1]} != centroid width {c.shape[1]}")
    labels, dist2 = _assignment_pass(x, c, chunk=chunk, threads=threads)
    return labels, np.sqrt(dist2)


def inertia(matrix, centroids, labels, chunk: int = DEFAULT_CHUNK, threads: int = 1) -> float:
    """Sum of squared distances of rows to their assigned centroids,
    accumulated directly (not via the expanded form) in double precision.
    """
    x = _as_rows(matrix)
    c = np.asarray(centroids, dtype=np.float64)
    labels = np.asarray(labels)
    if x.shape[1] != c.shape[1]:
        raise DimensionMismatch(f"row width {x.shape[1]} != centroid width {c.shape[1]}")
    if labels.shape[0] != x.shape[0]:
        raise DimensionMismatch("labels length != row count")

    def run(rng_pair):
        s, e = rng_pair
        block = np.asarray(x[s:e], dtype=np.float64)
        diff = block - c[labels[s:e]]
        return float(np.einsum("ij,ij->", diff, diff))

    partials = _map_chunks(run, _chunk_ranges(x.shape[0], chunk), threads)
    return float(sum(partials))  # fixed chunk order


def model_inertia(matrix, model: KMeansModel, **kw) -> float:
    return inertia(matrix, model.centroids, model.labels, **kw)


def _check_finite(x, chunk=DEFAULT_CHUNK):
    for s, e in _chunk_ranges(x.shape[0], chunk):
        if not np.all(np.isfinite(x[s:e])):
            raise NonFiniteData("matrix contains NaN or infinite values")


def _repair_empty(labels, dist2, sums, counts, x, centroids):
    """Give each empty cluster the row currently farthest from its centroid.

    Rows are seized in descending distance order (ties to the lower row
    index), one per empty cluster, lowest empty cluster index first.
    """
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return
    order = np.lexsort((np.arange(dist2.shape[0]), -dist2))
    take = 0
    for c_idx in empties:
        row = -1
        while take < order.size:
            candidate = order[take]
            take += 1
            if counts[labels[candidate]] > 1:  # never empty a singleton
                row = candidate
                break
        if row < 0:
            return
        old = labels[row]
        row_vec = np.asarray(x[row], dtype=np.float64)
        sums[old] -= row_vec
        counts[old] -= 1
        labels[row] = c_idx
        sums[c_idx] = row_vec
        counts[c_idx] = 1
        centroids[c_idx] = row_vec


def fit_lloyd(
    matrix,
    init_centroids,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    chunk: int = DEFAULT_CHUNK,
    threads: int = 1,
    seed: int = 0,
    check_finite: bool = True,
) -> KMeansModel:
    """Lloyd iteration from explicit initial centroids.

    Alternates nearest-centroid assignment and centroid-mean update until
    the relative inertia improvement drops below ``tol`` or ``max_iter``
    is reached.  Empty clusters seize the row farthest from its current
    centroid.  The reported labels and inertia come from one final
    assignment pass against the final centroids, and the per-iteration
    inertia history is non-increasing.
    """
    x = _as_rows(matrix)
    centroids = np.array(init_centroids, dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[1] != x.shape[1]:
        raise DimensionMismatch(
            f"init centroids shape {centroids.shape} incompatible with d={x.shape[1]}"
        )
    k = centroids.shape[0]
    if x.shape[0] < k:
        raise TooFewRows(f"need at least k={k} rows, have {x.shape[0]}")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if check_finite:
        _check_finite(x, chunk)

    history: list[float] = []
    prev = np.inf
    iterations = 0
    for _ in range(max_iter):
        labels, dist2, sums, counts = _assignment_pass(
            x, centroids, chunk=chunk, threads=threads, want_sums=True
        )
        cur = float(dist2.sum())
        history.append(cur)
        iterations += 1
        _repair_empty(labels, dist2, sums, counts, x, centroids)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if prev != np.inf:
            if prev == 0.0 or (prev - cur) < tol * prev:
                break
        prev = cur

    labels, dist2 = _assignment_pass(x, centroids, chunk=chunk, threads=threads)
    return KMeansModel(
        k=k,
        centroids=centroids,
        labels=labels,
        inertia=float(dist2.sum()),
        iterations=iterations,
        seed=seed,
        inertia_history=tuple(history),
    )


def fit_minibatch(
    matrix,
    k: int,
    batch_size: int = 1024,
    max_iters: int = 100,
    rng_seed: int = 0,
    chunk: int = DEFAULT_CHUNK,
    threads: int = 1,
    check_finite: bool = True,
) -> KMeansModel:
    """Mini-batch k-means with per-center learning rates.

    Each batch assigns its rows to the nearest centroid and moves each
    touched centroid to the running mean of every row ever assigned to it
    (rate 1/count), which matches the classic per-point sequential update
    exactly.  Seeding is k-means++ on a seeded subsample.  Final labels and
    inertia come from one full assignment pass; runs are deterministic per
    seed.
    """
    x = _as_rows(matrix)
    n = x.shape[0]
    if n < k:
        raise TooFewRows(f"need at least k={k} rows, have {n}")
    if batch_size < k:
        raise ValueError(f"batch_size must be >= k, got {batch_size} < {k}")
    if check_finite:
        _check_finite(x, chunk)
    rng = np.random.default_rng(rng_seed)

    init_size = min(n, max(10 * k, 3 * batch_size))
    if init_size < n:
        sample = np.sort(rng.choice(n, size=init_size, replace=False))
        centroids = kmeans_pp_init(np.asarray(x[sample]), k, int(rng.integers(2**31)))
    else:
        centroids = kmeans_pp_init(x, k, int(rng.integers(2**31)))

    counts = np.zeros(k, dtype=np.float64)
    bsz = min(batch_size, n)
    for _ in range(max_iters):
        idx = np.sort(rng.choice(n, size=bsz, replace=False))
        batch = np.asarray(x[idx], dtype=np.float64)
        lab, _, sums, batch_counts = _assignment_pass(
            batch, centroids, chunk=chunk, threads=1, want_sums=True
        )
        touched = batch_counts > 0
        new_counts = counts[touched] + batch_counts[touched]
        centroids[touched] = (
            centroids[touched] * counts[touched, None] + sums[touched]
        ) / new_counts[:, None]
        counts[touched] = new_counts

    labels, dist2 = _assignment_pass(x, centroids, chunk=chunk, threads=threads)
    return KMeansModel(
        k=k,
        centroids=centroids,
        labels=labels,
        inertia=float(dist2.sum()),
        iterations=max_iters,
        seed=rng_seed,
    )


def fit_kmeans(
    matrix,
    k: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    minibatch: bool = False,
    batch_size: int = 1024,
    chunk: int = DEFAULT_CHUNK,
    threads: int = 1,
) -> KMeansModel:
    """Best-of-``restarts`` fit (by final inertia, first winner on ties).

    ``minibatch`` only changes anything when batches are smaller than the
    data; a batch that covers every row each pass is exactly one Lloyd
    sweep with a decaying step bolted on, so small inputs fall through to
    plain Lloyd instead of crawling under the 1/count rate.
    """
    n = matrix.n if hasattr(matrix, "n") else np.asarray(matrix).shape[0]
    if minibatch and batch_size >= n:
        minibatch = False
    best = None
    for r in range(restarts):
        seed_r = seed + r
        if minibatch:
            model = fit_minibatch(
                matrix, k, batch_size=batch_size, max_iters=max_iter,
                rng_seed=seed_r, chunk=chunk, threads=threads,
                check_finite=(r == 0),
            )
        else:
            init = kmeans_pp_init(matrix, k, seed_r)
            model = fit_lloyd(
                matrix, init, tol=tol, max_iter=max_iter, chunk=chunk,
                threads=threads, seed=seed_r, check_finite=(r == 0),
            )
        if best is None or model.inertia < best.inertia:
            best = model
    return KMeansModel(
        k=best.k, centroids=best.centroids, labels=best.labels,
        inertia=best.inertia, iterations=best.iterations, seed=best.seed,
        restarts=restarts, inertia_history=best.inertia_history,
    )


def save_model(model: KMeansModel, path: str | Path) -> None:
    """Write the centroid model as JSON with the fixed key set."""
    doc = {
        "k": model.k,
        "d": model.d,
        "seed": model.seed,
        "iterations": model.iterations,
        "inertia": model.inertia,
        "centroids": [[float(v) for v in row] for row in model.centroids],
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_model(path: str | Path, labels: np.ndarray | None = None) -> KMeansModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    centroids = np.asarray(doc["centroids"], dtype=np.float64)
    if centroids.shape != (doc["k"], doc["d"]):
        raise ClusterError(f"{path}: centroid shape does not match k/d header")
    return KMeansModel(
        k=doc["k"],
        centroids=centroids,
        labels=labels if labels is not None else np.empty(0, dtype=np.uint32),
        inertia=float(doc["inertia"]),
        iterations=int(doc["iterations"]),
        seed=int(doc["seed"]),
    )


def save_labels(labels: np.ndarray, path: str | Path) -> None:
    """Binary label array: magic "KLBL", n as u32 LE, then n u32 LE labels."""
    labels = np.asarray(labels, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(LABELS_MAGIC)
        fh.write(struct.pack("<I", labels.shape[0]))
        fh.write(labels.tobytes())


def load_labels(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != LABELS_MAGIC:
        raise ClusterError(f"{path}: bad magic {raw[:4]!r}")
    (n,) = struct.unpack("<I", raw[4:8])
    if len(raw) != 8 + 4 * n:
        raise ClusterError(f"{path}: size inconsistent with n={n}")
    return np.frombuffer(raw[8:], dtype="<u4").copy()
