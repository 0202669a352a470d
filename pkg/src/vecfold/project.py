"""2D projection: uniform sampling, exact PCA, and a neighbor-embedding layout.

The layout pipeline mirrors the standard fuzzy neighbor-embedding recipe:

1. exact brute-force k-nearest neighbors over the (sampled) rows;
2. per-node smooth kernel weights -- offset rho_i is the distance to the
   nearest neighbor and the scale sigma_i is bisected so the kernel mass
   sums to log2(n_neighbors);
3. symmetrization with the probabilistic t-conorm w1 + w2 - w1*w2;
4. stochastic gradient descent on the fuzzy cross-entropy objective with
   negative sampling, attraction along graph edges and repulsion against
   uniformly sampled non-edges, starting from the top-2 PCA projection
   scaled into [-10, 10].

Edges are scheduled by weight (an edge of relative weight w fires roughly
w * epochs times); updates within an epoch are applied as one batched
scatter-add, which keeps runs byte-deterministic for a fixed seed.
Brute-force kNN is O(n^2 d) and intended for samples capped around the
70,000-row default, not full corpora.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_SIZE = 70_000
DEFAULT_N_NEIGHBORS = 15
DEFAULT_MIN_DIST = 0.1
DEFAULT_EPOCHS = 200

_NEGATIVE_SAMPLE_RATE = 5.0
_INIT_SCALE = 10.0
_GRAD_CLIP = 4.0
_SIGMA_ITERS = 64
_SIGMA_TOL = 1e-5


class ProjectError(Exception):
    pass


class TooFewRows(ProjectError):
    pass


class RankDeficient(ProjectError):
    pass


class NonFiniteGradient(ProjectError):
    pass


# ---------------------------------------------------------------- sampling


def viz_sample(n_total: int, sample_size: int, rng_seed: int) -> np.ndarray:
    """Distinct row indices for visualization, ascending, deterministic.

    When the requested sample covers the data, every index is returned.
    """
    if n_total < 1 or sample_size < 1:
        raise ValueError("n_total and sample_size must be >= 1")
    if sample_size >= n_total:
        return np.arange(n_total, dtype=np.int64)
    rng = np.random.default_rng(rng_seed)
    return np.sort(rng.choice(n_total, size=sample_size, replace=False)).astype(np.int64)


# ---------------------------------------------------------------- PCA


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray                # (d,)
    components: np.ndarray          # (p, d), orthonormal rows
    explained_variance: np.ndarray  # (p,), descending, >= 0


def pca_fit(matrix, p: int) -> PCAModel:
    """Top-p principal components via SVD of the centered data.

    Component signs are fixed so each component's largest-magnitude entry
    is positive, making fits reproducible.
    """
    x = np.asarray(getattr(matrix, "rows", matrix), dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise RankDeficient(f"need at least 2 rows, have {n}")
    if not 1 <= p <= min(n - 1, d):
        raise ValueError(f"p must be in [1, min(n-1, d)] = [1, {min(n - 1, d)}]")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:p]
    flip = np.sign(components[np.arange(p), np.argmax(np.abs(components), axis=1)])
    flip[flip == 0] = 1.0
    components = components * flip[:, None]
    var = np.maximum((s[:p] ** 2) / (n - 1), 0.0)
    return PCAModel(mean=mean, components=components, explained_variance=var)


def pca_transform(matrix, model: PCAModel, chunk: int = 8192) -> np.ndarray:
    x = getattr(matrix, "rows", matrix)
    n = x.shape[0]
    out = np.empty((n, model.components.shape[0]), dtype=np.float64)
    for s in range(0, n, chunk):
        block = np.asarray(x[s : s + chunk], dtype=np.float64)
        out[s : s + chunk] = (block - model.mean) @ model.components.T
    return out


# ---------------------------------------------------------------- kNN graph


@dataclass(frozen=True)
class NeighborGraph:
    """Directed exact-kNN graph with symmetrized edge weights.

    Every node has exactly ``n_neighbors`` out-edges (never to itself),
    sorted by distance then target index.  ``weights[i, j]`` is the
    symmetrized membership weight of edge (i -> indices[i, j]), in (0, 1].
    """

    indices: np.ndarray    # (n, k) int64
    distances: np.ndarray  # (n, k) float64, Euclidean
    weights: np.ndarray    # (n, k) float64
    n_neighbors: int

    @property
    def n(self) -> int:
        return self.indices.shape[0]


def _exact_knn(x: np.ndarray, k: int, chunk: int, threads: int = 1):
    n = x.shape[0]
    sq = np.einsum("ij,ij->i", x, x)
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=np.float64)
    # keep each chunk's full distance block under ~256 MB
    chunk = max(1, min(chunk, (1 << 25) // max(1, n)))

    def run(bounds):
        s, e = bounds
        d2 = sq[s:e, None] - 2.0 * (x[s:e] @ x.T) + sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(e - s), np.arange(s, e)] = np.inf  # no self-edges
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        part_d2 = np.take_along_axis(d2, part, axis=1)
        for r in range(e - s):
            order = np.lexsort((part[r], part_d2[r]))
            indices[s + r] = part[r][order]
            distances[s + r] = np.sqrt(part_d2[r][order])

    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    if threads <= 1 or len(bounds) <= 1:
        for b in bounds:
            run(b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, bounds))
    return indices, distances


def _smooth_weights(distances: np.ndarray, k: int):
    """Solve per-node kernel scales so sum_j exp(-max(0, d_ij - rho_i)/sigma_i)
    hits log2(k), then return the directed weights."""
    n = distances.shape[0]
    rho = distances[:, 0].copy()
    target = np.log2(k)

    adjusted = np.maximum(distances - rho[:, None], 0.0)

    def mass(sigma):
        return np.exp(-adjusted / sigma[:, None]).sum(axis=1)

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    for _ in range(_SIGMA_ITERS):
        psum = mass(np.maximum(mid, 1e-300))
        done = np.abs(psum - target) < _SIGMA_TOL
        if done.all():
            break
        too_high = psum > target
        hi = np.where(~done & too_high, mid, hi)
        lo = np.where(~done & ~too_high, mid, lo)
        # bisect once hi is finite; keep doubling while it is not
        unbounded = np.isinf(hi)
        mid = np.where(
            done, mid, np.where(unbounded, mid * 2.0, (lo + hi) / 2.0)
        )

    sigma = np.maximum(mid, 1e-12)
    weights = np.exp(-adjusted / sigma[:, None])
    # keep weights strictly positive even if the exponent underflows
    np.maximum(weights, np.finfo(np.float64).tiny, out=weights)
    return rho, sigma, weights


def _symmetrize(indices: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Apply w_sym = w_ij + w_ji - w_ij * w_ji to every directed edge."""
    n, k = indices.shape
    heads = np.repeat(np.arange(n, dtype=np.int64), k)
    tails = indices.ravel()
    w = weights.ravel()
    fwd_keys = heads * n + tails
    rev_keys = tails * n + heads
    order = np.argsort(fwd_keys, kind="stable")
    sorted_keys = fwd_keys[order]
    pos = np.searchsorted(sorted_keys, rev_keys)
    pos_clipped = np.minimum(pos, sorted_keys.size - 1)
    found = sorted_keys[pos_clipped] == rev_keys
    w_rev = np.where(found, w[order[pos_clipped]], 0.0)
    w_sym = w + w_rev - w * w_rev
    return w_sym.reshape(n, k)


def knn_graph(matrix_or_sample, n_neighbors: int, chunk: int = 1024,
              threads: int = 1) -> NeighborGraph:
    """Exact Euclidean kNN graph with symmetrized smooth-kernel weights."""
    x = np.asarray(getattr(matrix_or_sample, "rows", matrix_or_sample), dtype=np.float64)
    n = x.shape[0]
    if n <= n_neighbors:
        raise TooFewRows(f"need more than n_neighbors={n_neighbors} rows, have {n}")
    indices, distances = _exact_knn(x, n_neighbors, chunk, threads)
    _, _, weights = _smooth_weights(distances, n_neighbors)
    weights = _symmetrize(indices, weights)
    return NeighborGraph(
        indices=indices, distances=distances, weights=weights, n_neighbors=n_neighbors
    )


def write_graph_csv(graph: NeighborGraph, path: str | Path) -> None:
    """Debug dump: one ``src,dst,distance,weight`` line per directed edge."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("src,dst,distance,weight\n")
        for i in range(graph.n):
            for j in range(graph.n_neighbors):
                fh.write(
                    f"{i},{int(graph.indices[i, j])},"
                    f"{float(graph.distances[i, j])!r},{float(graph.weights[i, j])!r}\n"
                )


# ---------------------------------------------------------------- layout


@dataclass(frozen=True)
class Projection2D:
    coords: np.ndarray          # (n, 2), finite
    source_sample: np.ndarray   # (n,) original row indices

    def __post_init__(self):
        if self.coords.shape[0] != self.source_sample.shape[0]:
            raise ProjectError("coordinate count != sample size")
        if not np.all(np.isfinite(self.coords)):
            raise ProjectError("projection contains non-finite coordinates")


def fit_curve_params(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Least-squares fit of 1/(1 + a x^(2b)) to the min_dist-shifted
    exponential used as the target membership curve."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.ones_like(xv)
    tail = xv >= min_dist
    yv[tail] = np.exp(-(xv[tail] - min_dist) / spread)
    (a, b), _ = curve_fit(curve, xv, yv)
    log.debug("curve params for min_dist=%g: a=%.6f b=%.6f", min_dist, a, b)
    return float(a), float(b)


def _undirected_edges(graph: NeighborGraph):
    n, k = graph.indices.shape
    heads = np.repeat(np.arange(n, dtype=np.int64), k)
    tails = graph.indices.ravel()
    w = graph.weights.ravel()
    a = np.minimum(heads, tails)
    b = np.maximum(heads, tails)
    keys = a * n + b
    uniq, first = np.unique(keys, return_index=True)
    return a[first], b[first], w[first]


def scale_init(coords: np.ndarray, max_coord: float = _INIT_SCALE) -> np.ndarray:
    peak = np.abs(coords).max()
    if peak == 0.0:
        return np.zeros_like(coords)
    return coords * (max_coord / peak)


def umap_layout(
    graph: NeighborGraph,
    epochs: int,
    rng_seed: int,
    min_dist: float = DEFAULT_MIN_DIST,
    init: np.ndarray | None = None,
    source_sample: np.ndarray | None = None,
    repulsion: float = 1.0,
    initial_alpha: float = 1.0,
) -> Projection2D:
    """Optimize 2D coordinates over the neighbor graph.

    ``init`` is the starting layout, normally the top-2 PCA projection of
    the same rows; it is rescaled into [-10, 10].  Runs are deterministic
    for a fixed seed.  Raises NonFiniteGradient if coordinates diverge.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    n = graph.n
    if init is None:
        raise ValueError("init coordinates are required (top-2 PCA of the sample)")
    if init.shape != (n, 2):
        raise ProjectError(f"init shape {init.shape} != ({n}, 2)")

    a, b = fit_curve_params(min_dist)
    heads, tails, weights = _undirected_edges(graph)
    order = np.lexsort((tails, heads))
    heads, tails, weights = heads[order], tails[order], weights[order]

    # an edge of relative weight w fires about w * epochs times
    eps_sample = weights.max() / weights
    eps_negative = eps_sample / _NEGATIVE_SAMPLE_RATE
    next_sample = eps_sample.copy()
    next_negative = eps_negative.copy()

    y = scale_init(np.asarray(init, dtype=np.float64)).copy()
    rng = np.random.default_rng(rng_seed)

    for epoch in range(epochs):
        alpha = initial_alpha * (1.0 - epoch / epochs)
        due = next_sample <= epoch
        if due.any():
            h = heads[due]
            t = tails[due]
            diff = y[h] - y[t]
            d2 = np.einsum("ij,ij->i", diff, diff)
            coeff = np.zeros_like(d2)
            pos = d2 > 0.0
            coeff[pos] = (-2.0 * a * b * d2[pos] ** (b - 1.0)) / (
                a * d2[pos] ** b + 1.0
            )
            grad = np.clip(coeff[:, None] * diff, -_GRAD_CLIP, _GRAD_CLIP)
            np.add.at(y, h, alpha * grad)
            np.add.at(y, t, -alpha * grad)
            next_sample[due] += eps_sample[due]

            n_neg = ((epoch - next_negative[due]) / eps_negative[due]).astype(np.int64)
            np.maximum(n_neg, 0, out=n_neg)
            total = int(n_neg.sum())
            if total > 0:
                rep_heads = np.repeat(h, n_neg)
                targets = rng.integers(0, n, size=total)
                diff = y[rep_heads] - y[targets]
                d2 = np.einsum("ij,ij->i", diff, diff)
                coeff = np.zeros_like(d2)
                pos = d2 > 0.0
                coeff[pos] = (2.0 * repulsion * b) / (
                    (0.001 + d2[pos]) * (a * d2[pos] ** b + 1.0)
                )
                grad = np.where(
                    coeff[:, None] > 0.0,
                    np.clip(coeff[:, None] * diff, -_GRAD_CLIP, _GRAD_CLIP),
                    _GRAD_CLIP,
                )
                grad[(d2 == 0.0) & (rep_heads == targets)] = 0.0
                np.add.at(y, rep_heads, alpha * grad)
            next_negative[due] += n_neg * eps_negative[due]
        if not np.all(np.isfinite(y)):
            raise NonFiniteGradient(f"layout diverged at epoch {epoch}")

    sample = (
        np.asarray(source_sample, dtype=np.int64)
        if source_sample is not None
        else np.arange(n, dtype=np.int64)
    )
    return Projection2D(coords=y, source_sample=sample)


def project_sample(
    data,
    sample_indices: np.ndarray,
    n_neighbors: int = DEFAULT_N_NEIGHBORS,
    min_dist: float = DEFAULT_MIN_DIST,
    epochs: int = DEFAULT_EPOCHS,
    rng_seed: int = 0,
    threads: int = 1,
) -> Projection2D:
    """Sample rows, build the graph, and lay them out from a PCA start."""
    rows = getattr(data, "rows", data)
    sample = np.asarray(rows[np.asarray(sample_indices)], dtype=np.float64)
    graph = knn_graph(sample, n_neighbors, threads=threads)
    pca = pca_fit(sample, 2)
    init = pca_transform(sample, pca)
    return umap_layout(
        graph, epochs, rng_seed, min_dist=min_dist, init=init,
        source_sample=np.asarray(sample_indices, dtype=np.int64),
    )


# ---------------------------------------------------------------- CSV IO


def write_projection_csv(projection: Projection2D, path: str | Path) -> None:
    """``row_index,x,y`` per point; floats use repr so reads round-trip."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("row_index,x,y\n")
        for idx, (px, py) in zip(projection.source_sample, projection.coords):
            fh.write(f"{int(idx)},{float(px)!r},{float(py)!r}\n")


def read_projection_csv(path: str | Path) -> Projection2D:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "row_index,x,y":
            raise ProjectError(f"{path}: unexpected header {header!r}")
        for line in fh:
            idx, px, py = line.rstrip("\n").split(",")
            rows.append((int(idx), float(px), float(py)))
    if not rows:
        return Projection2D(
            coords=np.empty((0, 2)), source_sample=np.empty(0, dtype=np.int64)
        )
    sample = np.array([r[0] for r in rows], dtype=np.int64)
    coords = np.array([[r[1], r[2]] for r in rows], dtype=np.float64)
    return Projection2D(coords=coords, source_sample=sample)
