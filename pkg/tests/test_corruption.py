import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_graph
from gcad.corruption import (
    CorruptionConfig, corrupt, corrupt_dataset, elbow_select, inertia_curve, inertia_of, injected_count, kmeans,
    partition_single_graph, pool_from_graphs, pool_from_partition,
)
from gcad.graphdata import Dataset, Graph


def blobs(rng, centers, per, spread=0.3):
    x = np.vstack([c + rng.normal(0, spread, size=(per, len(c))) for c in centers])
    return x, np.repeat(np.arange(len(centers)), per)


def test_kmeans_two_blobs():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]])
    r = kmeans(x, 2, seed=0)
    assert r.assignment[0] == r.assignment[1] != r.assignment[2] == r.assignment[3]
    assert r.inertia == pytest.approx(4 * 0.25)


def test_kmeans_k_equals_n(rng):
    x = rng.normal(size=(7, 2))
    assert kmeans(x, 7).inertia == pytest.approx(0.0, abs=1e-12)


def test_kmeans_close_to_best_of_restarts(rng):
    from sklearn.cluster import KMeans

    x, _ = blobs(rng, rng.normal(0, 3, size=(5, 3)), 40, spread=1.0)
    ours = kmeans(x, 5, seed=0).inertia
    oracle = KMeans(5, n_init=20, random_state=0).fit(x).inertia_
    assert ours <= 1.05 * oracle


def test_kmeans_inertia_recomputes_and_is_monotone(rng):
    x = rng.normal(size=(120, 4))
    r = kmeans(x, 6, seed=3)
    d = ((x[:, None, :] - r.centroids[None]) ** 2).sum(-1)
    assert r.inertia == pytest.approx(d.min(1).sum(), abs=1e-8)
    assert r.inertia == pytest.approx(inertia_of(x, r.assignment, r.centroids), abs=1e-8)
    assert np.all(np.diff(r.history) <= 1e-9)
    assert set(np.unique(r.assignment)) == set(range(6))


def test_kmeans_reseeds_empty_cluster():
    # duplicated points force an empty cluster on the far-point seeding
    x = np.array([[0.0, 0.0]] * 5 + [[1.0, 0.0]] * 5 + [[0.0, 1.0]])
    r = kmeans(x, 3, seed=0)
    assert len(np.unique(r.assignment)) == 3


def test_kmeans_errors(rng):
    x = rng.normal(size=(4, 2))
    with pytest.raises(ValueError):
        kmeans(x, 5)
    with pytest.raises(ValueError):
        kmeans(x, 2, max_iters=0)


def test_elbow_examples():
    assert elbow_select([100, 20, 18, 17, 16]) == 2
    assert elbow_select({3: 100, 4: 20, 5: 18, 6: 17}) == 4
    assert elbow_select([10, 8, 6, 4, 2], k_min=2) == 2
    assert elbow_select([5, 5, 5, 5]) == 1


def test_elbow_errors():
    with pytest.raises(ValueError):
        elbow_select([3, 2])
    with pytest.raises(ValueError):
        elbow_select([1, 2, 3])


def test_elbow_finds_three_blobs():
    rng = np.random.default_rng(0)
    x, _ = blobs(rng, [[0, 0], [8, 0], [0, 8]], 60, spread=0.5)
    curve = inertia_curve(x, range(2, 9))
    assert elbow_select(curve) == 3


def _components_graph():
    x = np.vstack([np.zeros((4, 2)), np.full((5, 2), 9.0)]) + 0.01 * np.arange(9)[:, None]
    a = np.zeros((9, 9))
    for i, j in [(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7), (7, 8)]:
        a[i, j] = a[j, i] = 1.0
    return Graph("c", x, a)


def test_partition_k1_is_identity():
    g = _components_graph()
    parts, index = partition_single_graph(g, 1)
    assert_array_equal(parts[0].adjacency, g.adjacency)
    assert_array_equal(index[0], np.arange(9))


def test_partition_recovers_components():
    parts, index = partition_single_graph(_components_graph(), 2)
    assert sorted(map(tuple, index)) == [tuple(range(4)), tuple(range(4, 9))]
    assert sum(p.num_edges for p in parts) == 7


def test_partition_induced_adjacency(rng):
    g = random_graph(rng, 30, d=2, p=0.3)
    parts, index = partition_single_graph(g, 4, seed=1)
    assert sorted(np.concatenate(index).tolist()) == list(range(30))
    for part, idx in zip(parts, index):
        assert min(len(i) for i in index) >= 3
        brute = np.array([[g.adjacency[u, v] for v in idx] for u in idx])
        assert_array_equal(part.adjacency, brute)


def _parts(rng, sizes):
    return [random_graph(rng, n, d=2, p=0.3, gid=f"p{i}") for i, n in enumerate(sizes)]


def test_inject_fifteen_of_hundred(rng):
    graphs = _parts(rng, [100, 60])
    pool, parts = pool_from_graphs(graphs)
    out = corrupt(parts, pool, CorruptionConfig(0.15, seed=0))
    assert out[0].injected.size == 15 and out[1].injected.size == 9


def test_minimum_one_injected(rng):
    pool, parts = pool_from_graphs(_parts(rng, [3, 3]))
    out = corrupt(parts, pool, CorruptionConfig(0.1))
    assert [c.injected.size for c in out] == [1, 1]
    assert injected_count(3, 0.1) == 1


def test_slice_equality_and_intra_edges(rng):
    g = random_graph(rng, 40, d=2, p=0.3)
    _, index = partition_single_graph(g, 3, seed=0)
    pool, parts = pool_from_partition(g, index)
    for c in corrupt(parts, pool, CorruptionConfig(0.2, seed=4)):
        ids = c.pool_ids
        assert_array_equal(c.graph.adjacency, g.adjacency[np.ix_(ids, ids)])
        n_orig = len(parts[c.source_part])
        assert_array_equal(c.graph.adjacency[:n_orig, :n_orig], g.adjacency[np.ix_(parts[c.source_part], parts[c.source_part])])
        assert_array_equal(c.graph.features, g.features[ids])


def test_donor_shortage_warns(rng):
    pool, parts = pool_from_graphs(_parts(rng, [40, 2]))
    with pytest.warns(RuntimeWarning, match="donor"):
        out = corrupt(parts, pool, CorruptionConfig(0.5))
    assert out[0].truncated and out[0].injected.size == 2


def test_corrupt_needs_two_parts(rng):
    pool, parts = pool_from_graphs(_parts(rng, [5]))
    with pytest.raises(ValueError):
        corrupt(parts, pool, CorruptionConfig())


def test_config_validation():
    for kw in ({"corrupt_ratio": 0.0}, {"corrupt_ratio": 1.0}, {"max_nodes_per_graph": 1}):
        with pytest.raises(ValueError):
            CorruptionConfig(**kw)


def test_node_cap(rng):
    pool, parts = pool_from_graphs(_parts(rng, [100, 100]))
    out = corrupt(parts, pool, CorruptionConfig(0.15, max_nodes_per_graph=64))
    assert all(c.graph.num_nodes <= 64 for c in out)


def test_reproducible(rng):
    pool, parts = pool_from_graphs(_parts(rng, [20, 25, 30]))
    a = corrupt(parts, pool, CorruptionConfig(seed=9))
    b = corrupt(parts, pool, CorruptionConfig(seed=9))
    for x, y in zip(a, b):
        assert_array_equal(x.pool_ids, y.pool_ids)
        assert_array_equal(x.graph.adjacency, y.graph.adjacency)
        assert x.provenance == y.provenance


def test_corrupt_dataset_single_graph_elbow():
    rng = np.random.default_rng(0)
    x, _ = blobs(rng, [[0, 0], [8, 0], [0, 8]], 30, spread=0.5)
    a = np.triu(rng.random((90, 90)) < 0.1, 1).astype(float)
    ds = Dataset("single", [Graph("s", x, a + a.T)])
    out, prov, k = corrupt_dataset(ds, CorruptionConfig(), k_range=(2, 8))
    assert k == 3 and len(out.graphs) == 3
    assert set(prov) == {g.id for g in out.graphs}


@settings(max_examples=200)
@given(st.lists(st.integers(2, 30), min_size=2, max_size=5), st.floats(0.05, 0.6), st.integers(0, 2**31 - 1))
def test_counts_and_provenance(sizes, ratio, seed):
    rng = np.random.default_rng(seed)
    graphs = _parts(rng, sizes)
    pool, parts = pool_from_graphs(graphs)
    by_id = {g.id: g for g in graphs}
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = corrupt(parts, pool, CorruptionConfig(ratio, seed=seed % 1000))
    for c, n in zip(out, sizes):
        k = c.injected.size
        if not c.truncated:
            assert k == max(1, int(np.floor(ratio * n + 0.5)))
        assert np.mean(c.graph.labels == 1) == k / (n + k)
        assert_allclose(c.graph.adjacency[:n, :n], graphs[c.source_part].adjacency)
        for node, src_graph, src_node in c.provenance:
            assert src_graph != graphs[c.source_part].id
            assert_array_equal(c.graph.features[node], by_id[src_graph].features[src_node])
