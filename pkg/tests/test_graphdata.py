import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_graph
from gcad.errors import DataError
from gcad.graphdata import Dataset, Graph, eigen_features, jacobi_eigh, load_dataset, make_split, normalized_laplacian, save_dataset
from gcad.graphdata.io import read_features, write_features
from gcad.graphdata.split import split_sizes


def _two_graph_dataset(rng):
    return Dataset("multi", [random_graph(rng, 5, gid="a"), random_graph(rng, 7, gid="b")])


def _write(tmp_path, ds):
    save_dataset(ds, tmp_path / "ds")
    return tmp_path / "ds"


# --- Graph invariants ------------------------------------------------------------


def test_graph_is_read_only(rng):
    g = random_graph(rng, 4)
    with pytest.raises(ValueError):
        g.adjacency[0, 1] = 3.0


@pytest.mark.parametrize(
    "adj, msg",
    [
        ([[0, 1], [0, 0]], "symmetric"),
        ([[1, 0], [0, 0]], "diagonal"),
        ([[0, -1], [-1, 0]], "nonnegative"),
    ],
)
def test_graph_rejects_bad_adjacency(adj, msg):
    with pytest.raises(DataError, match=msg):
        Graph("g", np.zeros((2, 1)), np.array(adj, dtype=float))


def test_graph_rejects_bad_label():
    with pytest.raises(DataError, match="label"):
        Graph("g", np.zeros((2, 1)), np.zeros((2, 2)), [0, 2])


def test_dataset_mode_counts(rng):
    g = random_graph(rng, 4)
    with pytest.raises(DataError):
        Dataset("multi", [g])
    with pytest.raises(DataError):
        Dataset("single", [g, random_graph(rng, 4, gid="h")])


def test_split_must_be_disjoint_and_exhaustive(rng):
    ds = _two_graph_dataset(rng)
    with pytest.raises(DataError, match="more than one"):
        Dataset("multi", ds.graphs, {"train": ["a", "b"], "valid": ["a"], "test": []})
    with pytest.raises(DataError, match="cover"):
        Dataset("multi", ds.graphs, {"train": ["a"], "valid": [], "test": []})


# --- on-disk format ----------------------------------------------------------------


def test_round_trip_is_bitwise(tmp_path, rng):
    ds = make_split(Dataset("multi", [random_graph(rng, 6, gid=f"g{i}") for i in range(5)]), seed=3)
    back = load_dataset(_write(tmp_path, ds))
    assert back.mode == "multi" and back.split == ds.split
    for a, b in zip(ds.graphs, back.graphs):
        assert a.id == b.id
        assert_array_equal(a.features, b.features)
        assert_array_equal(a.adjacency, b.adjacency)
        assert_array_equal(a.labels, b.labels)


def test_two_graph_fixture_loads(tmp_path, rng):
    ds = load_dataset(_write(tmp_path, _two_graph_dataset(rng)))
    assert len(ds.graphs) == 2


def test_features_header_and_layout(tmp_path):
    x = np.arange(6.0).reshape(2, 3)
    write_features(tmp_path / "f.f64", x)
    raw = (tmp_path / "f.f64").read_bytes()
    assert raw[:16] == (2).to_bytes(8, "little") + (3).to_bytes(8, "little")
    assert_array_equal(np.frombuffer(raw[16:], "<f8"), np.arange(6.0))
    assert_array_equal(read_features(tmp_path / "f.f64"), x)


def test_ragged_features_rejected(tmp_path, rng):
    root = _write(tmp_path, _two_graph_dataset(rng))
    path = root / "a" / "features.f64"
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError, match="features.f64"):
        load_dataset(root)


def test_edge_out_of_range_names_row(tmp_path, rng):
    root = _write(tmp_path, _two_graph_dataset(rng))
    with open(root / "a" / "edges.csv", "a") as fh:
        fh.write("0,5,1.0\n")
    with pytest.raises(DataError) as exc:
        load_dataset(root)
    assert exc.value.line is not None and "edges.csv" in str(exc.value)


def test_asymmetric_listing_rejected(tmp_path, rng):
    root = _write(tmp_path, _two_graph_dataset(rng))
    (root / "a" / "edges.csv").write_text("src,dst,weight\n0,1,1.0\n1,0,2.0\n")
    with pytest.raises(DataError, match="asymmetric") as exc:
        load_dataset(root)
    assert exc.value.line == 3


def test_duplicate_relations_are_merged(tmp_path, rng):
    root = _write(tmp_path, _two_graph_dataset(rng))
    (root / "a" / "edges.csv").write_text("src,dst,weight\n0,1,1.0\n0,1,0.5\n")
    ds = load_dataset(root)
    assert ds.graph("a").adjacency[0, 1] == 1.5 == ds.graph("a").adjacency[1, 0]


@pytest.mark.parametrize("row", ["0,0,1.0", "0,1,0", "0,1,-2"])
def test_bad_edge_rows(tmp_path, rng, row):
    root = _write(tmp_path, _two_graph_dataset(rng))
    (root / "a" / "edges.csv").write_text(f"src,dst,weight\n{row}\n")
    with pytest.raises(DataError):
        load_dataset(root)


def test_bad_label_names_file_and_line(tmp_path, rng):
    root = _write(tmp_path, _two_graph_dataset(rng))
    lines = (root / "a" / "nodes.csv").read_text().splitlines()
    lines[2] = "1,7"
    (root / "a" / "nodes.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError) as exc:
        load_dataset(root)
    assert exc.value.line == 3 and "nodes.csv" in str(exc.value)


def test_missing_file(tmp_path, rng):
    root = _write(tmp_path, _two_graph_dataset(rng))
    (root / "b" / "nodes.csv").unlink()
    with pytest.raises(DataError, match="missing"):
        load_dataset(root)
    with pytest.raises(DataError, match="does not exist"):
        load_dataset(tmp_path / "nowhere")


def test_manifest_dim_mismatch(tmp_path, rng):
    root = _write(tmp_path, _two_graph_dataset(rng))
    m = json.loads((root / "manifest.json").read_text())
    m["feature_dim"] = 9
    (root / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DataError, match="feature dim"):
        load_dataset(root)


# --- splits --------------------------------------------------------------------------


def test_split_sizes_rule():
    assert split_sizes(10, (0.7, 0.1, 0.2)) == (7, 1, 2)
    assert split_sizes(55, (40 / 55, 5 / 55, 10 / 55)) == (40, 5, 10)
    assert split_sizes(3, (0.7, 0.1, 0.2)) == (1, 1, 1)


def test_make_split_ten_graphs(rng):
    ds = Dataset("multi", [random_graph(rng, 4, gid=f"g{i}") for i in range(10)])
    for seed in range(5):
        s = make_split(ds, seed=seed).split
        assert [len(s[p]) for p in ("train", "valid", "test")] == [7, 1, 2]
    assert make_split(ds, seed=4).split == make_split(ds, seed=4).split


def test_make_split_rejects_tiny(rng):
    ds = Dataset("multi", [random_graph(rng, 4, gid=f"g{i}") for i in range(2)])
    with pytest.raises(ValueError):
        make_split(ds)


def test_single_graph_split_covers_labeled_nodes(rng):
    labels = rng.choice([-1, 0, 1], size=60)
    g = random_graph(rng, 60, labels=labels)
    s = make_split(Dataset("single", [g]), seed=1).split
    covered = sorted(s["train"] + s["valid"] + s["test"])
    assert covered == sorted(np.nonzero(labels != -1)[0].tolist())


# --- spectral --------------------------------------------------------------------------


def test_laplacian_two_nodes():
    g = Graph("g", np.zeros((2, 1)), np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert_allclose(normalized_laplacian(g), [[1, -1], [-1, 1]])


def test_laplacian_empty_graph_is_zero():
    g = Graph("g", np.zeros((3, 1)), np.zeros((3, 3)))
    assert_array_equal(normalized_laplacian(g), np.zeros((3, 3)))


def test_laplacian_spectrum_in_range(rng):
    lap = normalized_laplacian(random_graph(rng, 5))
    w = np.linalg.eigvalsh(lap)
    assert w.min() >= -1e-10 and w.max() <= 2 + 1e-10


def test_laplacian_rejects_negative_weights():
    with pytest.raises(ValueError):
        normalized_laplacian(np.array([[0.0, -1.0], [-1.0, 0.0]]))


def test_path_graph_spectrum():
    a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    ef = eigen_features(Graph("p3", np.zeros((3, 1)), a), 3)
    assert_allclose(ef.eigenvalues, [0, 1, 2], atol=1e-8)


def test_smallest_eigenvector_is_sqrt_degree(rng):
    a = np.ones((5, 5)) - np.eye(5)
    a[0, 1] = a[1, 0] = 0.0
    ef = eigen_features(Graph("g", np.zeros((5, 1)), a), 1)
    expected = np.sqrt(a.sum(1))
    expected /= np.linalg.norm(expected)
    assert ef.eigenvalues[0] == pytest.approx(0.0, abs=1e-10)
    assert_allclose(np.abs(ef.eigenvectors[:, 0]), expected, atol=1e-8)


def test_eigen_features_orders_and_errors(rng):
    g = random_graph(rng, 8, p=0.6)
    small = eigen_features(g, 3)
    large = eigen_features(g, 3, order="largest")
    w = np.linalg.eigvalsh(normalized_laplacian(g))
    assert_allclose(small.eigenvalues, w[:3], atol=1e-10)
    assert_allclose(large.eigenvalues, w[::-1][:3], atol=1e-10)
    with pytest.raises(ValueError):
        eigen_features(g, 9)


def test_jacobi_fifty_node_residuals(rng):
    lap = normalized_laplacian(random_graph(rng, 50, p=0.1))
    w, v = jacobi_eigh(lap)
    norm = np.linalg.norm(lap)
    assert np.max(np.linalg.norm(lap @ v - v * w, axis=0)) <= 1e-8 * norm
    assert_allclose(v.T @ v, np.eye(50), atol=1e-8)
    assert_allclose(w, np.linalg.eigvalsh(lap), atol=1e-10)


def test_jacobi_isolated_nodes_converge(rng):
    g = random_graph(rng, 41, p=0.05)
    w, v = jacobi_eigh(normalized_laplacian(g))
    assert_allclose(v.T @ v, np.eye(41), atol=1e-8)


@settings(max_examples=200)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_jacobi_matches_numpy(n, seed):
    m = np.random.default_rng(seed).normal(size=(n, n))
    m = m + m.T
    w, v = jacobi_eigh(m)
    assert_allclose(w, np.linalg.eigvalsh(m), atol=1e-9)
    assert_allclose(m @ v, v * w, atol=1e-8)
