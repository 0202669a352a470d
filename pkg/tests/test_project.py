"""Sampling, PCA, kNN graph construction, and the 2D layout."""

import numpy as np
import pytest

from vecfold import project
from vecfold.project import (
    NeighborGraph,
    Projection2D,
    TooFewRows,
    fit_curve_params,
    knn_graph,
    pca_fit,
    pca_transform,
    project_sample,
    read_projection_csv,
    scale_init,
    umap_layout,
    viz_sample,
    write_projection_csv,
)
from oracles import blobs, brute_knn, pca_eigh, symmetrize_reference


# ---------------------------------------------------------------- sampling


def test_viz_sample_basic_properties():
    s = viz_sample(1000, 100, rng_seed=0)
    assert s.shape == (100,)
    assert len(np.unique(s)) == 100
    assert np.all(np.diff(s) > 0)  # ascending
    assert s.min() >= 0 and s.max() < 1000


def test_viz_sample_deterministic_and_seed_sensitive():
    assert np.array_equal(viz_sample(500, 50, 1), viz_sample(500, 50, 1))
    assert not np.array_equal(viz_sample(500, 50, 1), viz_sample(500, 50, 2))


def test_viz_sample_covers_small_input():
    assert np.array_equal(viz_sample(10, 70000, 0), np.arange(10))
    assert np.array_equal(viz_sample(10, 10, 3), np.arange(10))


# ---------------------------------------------------------------- PCA


def test_pca_matches_eigh_oracle():
    rng = np.random.default_rng(0)
    # anisotropic data so the spectrum is well separated
    x = rng.normal(size=(300, 10)) * np.linspace(5.0, 0.5, 10)
    model = pca_fit(x, 4)
    want_evals, want_comps = pca_eigh(x, 4)
    assert np.allclose(model.explained_variance, want_evals, atol=1e-8)
    for got, want in zip(model.components, want_comps):
        # eigenvectors match up to overall sign
        assert min(np.abs(got - want).max(), np.abs(got + want).max()) < 1e-8


def test_pca_components_orthonormal():
    x = np.random.default_rng(1).normal(size=(100, 8))
    model = pca_fit(x, 5)
    gram = model.components @ model.components.T
    assert np.allclose(gram, np.eye(5), atol=1e-10)


def test_pca_sign_convention_reproducible():
    x = np.random.default_rng(2).normal(size=(60, 6))
    a = pca_fit(x, 3)
    b = pca_fit(np.array(x), 3)
    assert np.array_equal(a.components, b.components)
    # largest-magnitude entry of each component is positive
    for comp in a.components:
        assert comp[np.argmax(np.abs(comp))] > 0


def test_pca_transform_centers_then_projects():
    x = np.random.default_rng(3).normal(size=(50, 4)) + 7.0
    model = pca_fit(x, 2)
    got = pca_transform(x, model, chunk=16)
    want = (x - model.mean) @ model.components.T
    assert np.allclose(got, want, atol=1e-12)
    assert np.allclose(got.mean(axis=0), 0.0, atol=1e-9)


def test_pca_validation():
    with pytest.raises(project.RankDeficient):
        pca_fit(np.zeros((1, 4)), 1)
    with pytest.raises(ValueError):
        pca_fit(np.zeros((10, 4)), 5)
    with pytest.raises(ValueError):
        pca_fit(np.zeros((3, 8)), 3)  # p capped at n-1


# ---------------------------------------------------------------- kNN graph


def test_knn_matches_brute_oracle():
    x = np.random.default_rng(4).normal(size=(120, 7))
    graph = knn_graph(x, 10, chunk=17)
    want_idx, want_dist = brute_knn(x, 10)
    assert np.array_equal(graph.indices, want_idx)
    assert np.allclose(graph.distances, want_dist, rtol=1e-9, atol=1e-9)


def test_knn_threads_identical():
    x = np.random.default_rng(5).normal(size=(200, 5))
    a = knn_graph(x, 8, chunk=23, threads=1)
    b = knn_graph(x, 8, chunk=23, threads=4)
    assert np.array_equal(a.indices, b.indices)
    assert a.weights.tobytes() == b.weights.tobytes()


def test_knn_no_self_edges_and_sorted():
    x = np.random.default_rng(6).normal(size=(50, 3))
    graph = knn_graph(x, 6)
    for i in range(50):
        assert i not in graph.indices[i]
        assert np.all(np.diff(graph.distances[i]) >= 0)


def test_knn_too_few_rows():
    with pytest.raises(TooFewRows):
        knn_graph(np.zeros((5, 2)), 5)


def test_smooth_weight_calibration():
    """Directed weights: nearest neighbor gets weight 1 and each node's
    kernel mass hits the log2(k) target."""
    x = np.random.default_rng(7).normal(size=(80, 6))
    k = 12
    _, distances = project._exact_knn(
        np.asarray(x, dtype=np.float64), k, chunk=1024
    )
    rho, sigma, weights = project._smooth_weights(distances, k)
    assert np.allclose(rho, distances[:, 0])
    assert np.all(weights > 0.0)
    assert np.all(weights <= 1.0)
    assert np.allclose(weights[:, 0], 1.0)  # d - rho = 0 for the nearest
    assert np.allclose(weights.sum(axis=1), np.log2(k), atol=1e-3)


def test_symmetrization_matches_dict_reference():
    x = np.random.default_rng(8).normal(size=(60, 4))
    k = 7
    indices, distances = project._exact_knn(np.asarray(x, np.float64), k, 1024)
    _, _, directed = project._smooth_weights(distances, k)
    got = project._symmetrize(indices, directed)
    want = symmetrize_reference(indices, directed)
    assert np.allclose(got, want, rtol=1e-12, atol=1e-15)
    assert np.all(got >= directed - 1e-15)  # t-conorm never decreases weight
    assert np.all(got <= 1.0 + 1e-12)


# ---------------------------------------------------------------- layout


def test_curve_params_reference_values():
    # frozen from the published reference implementation of the same
    # least-squares fit (min_dist=0.1, spread=1.0)
    a, b = fit_curve_params(0.1)
    assert a == pytest.approx(1.5769434603113077, rel=1e-3)
    assert b == pytest.approx(0.8950608781227859, rel=1e-3)
    # and the defining property: the curve tracks the target at min_dist
    assert 1.0 / (1.0 + a * 0.1 ** (2 * b)) == pytest.approx(1.0, abs=0.06)


def test_scale_init_bounds():
    coords = np.array([[2.0, -8.0], [4.0, 1.0]])
    scaled = scale_init(coords)
    assert np.abs(scaled).max() == pytest.approx(10.0)
    assert np.allclose(scale_init(np.zeros((3, 2))), 0.0)


def _tiny_layout(seed=0, epochs=30):
    x, y, _ = blobs(150, 6, 3, spacing=12.0, seed=3)
    graph = knn_graph(x, 8)
    init = pca_transform(x, pca_fit(x, 2))
    proj = umap_layout(graph, epochs=epochs, rng_seed=seed, init=init)
    return x, y, proj


def test_layout_deterministic_per_seed():
    _, _, a = _tiny_layout(seed=4)
    _, _, b = _tiny_layout(seed=4)
    assert a.coords.tobytes() == b.coords.tobytes()
    _, _, c = _tiny_layout(seed=5)
    assert not np.array_equal(a.coords, c.coords)


def test_layout_requires_init_and_checks_shape():
    x, _, _ = blobs(60, 4, 2, spacing=8.0, seed=1)
    graph = knn_graph(x, 5)
    with pytest.raises(ValueError):
        umap_layout(graph, epochs=5, rng_seed=0, init=None)
    with pytest.raises(project.ProjectError):
        umap_layout(graph, epochs=5, rng_seed=0, init=np.zeros((10, 2)))


def test_layout_keeps_blobs_separated():
    """Cluster mates should end up nearer each other than to other clusters."""
    _, y, proj = _tiny_layout(epochs=80)
    coords = proj.coords
    centers = np.stack([coords[y == b].mean(axis=0) for b in range(3)])
    within = np.concatenate(
        [np.linalg.norm(coords[y == b] - centers[b], axis=1) for b in range(3)]
    )
    between = [
        np.linalg.norm(centers[i] - centers[j])
        for i in range(3)
        for j in range(i + 1, 3)
    ]
    assert min(between) > 2.0 * within.mean()


def test_projection2d_validation():
    with pytest.raises(project.ProjectError):
        Projection2D(coords=np.zeros((3, 2)), source_sample=np.arange(2))
    bad = np.zeros((2, 2))
    bad[0, 0] = np.inf
    with pytest.raises(project.ProjectError):
        Projection2D(coords=bad, source_sample=np.arange(2))


def test_project_sample_end_to_end_deterministic():
    x, _, _ = blobs(200, 8, 3, spacing=10.0, seed=2)
    sample = viz_sample(200, 120, rng_seed=0)
    a = project_sample(x, sample, n_neighbors=10, epochs=20, rng_seed=1)
    b = project_sample(x, sample, n_neighbors=10, epochs=20, rng_seed=1)
    assert a.coords.tobytes() == b.coords.tobytes()
    assert np.array_equal(a.source_sample, sample)


# ---------------------------------------------------------------- CSV


def test_projection_csv_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(9)
    proj = Projection2D(
        coords=rng.normal(size=(40, 2)),
        source_sample=np.sort(rng.choice(1000, size=40, replace=False)),
    )
    path = tmp_path / "proj.csv"
    write_projection_csv(proj, path)
    back = read_projection_csv(path)
    # repr round-trips doubles exactly
    assert back.coords.tobytes() == proj.coords.tobytes()
    assert np.array_equal(back.source_sample, proj.source_sample)
    assert path.read_text().splitlines()[0] == "row_index,x,y"


def test_projection_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "proj.csv"
    path.write_text("x,y\n1.0,2.0\n")
    with pytest.raises(project.ProjectError):
        read_projection_csv(path)


def test_graph_csv_written(tmp_path):
    x = np.random.default_rng(1).normal(size=(20, 3))
    graph = knn_graph(x, 4)
    path = tmp_path / "graph.csv"
    project.write_graph_csv(graph, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "src,dst,distance,weight"
    assert len(lines) == 1 + 20 * 4
