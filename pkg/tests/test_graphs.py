import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphcond.graphs import (DatasetFormatError, Graph, GraphDataset, average_node_count,
                              normalize_adjacency, parse_tu_dataset, read_condensed, split_dataset,
                              toy_dataset, write_condensed, write_tu_dataset)

from conftest import MUTAG_DIR, requires_mutag


def write_files(tmp_path, name, **files):
    for key, lines in files.items():
        (tmp_path / f"{name}_{key}.txt").write_text("\n".join(lines) + "\n")
    return tmp_path


def test_symmetrized_single_edge(tmp_path):
    write_files(tmp_path, "X", A=["1, 2", "2, 1"], graph_indicator=["1", "1"], graph_labels=["1"])
    ds = parse_tu_dataset(tmp_path, "X")
    np.testing.assert_array_equal(ds.graphs[0].adjacency, [[0, 1], [1, 0]])
    assert ds.graphs[0].edge_count == 1


def test_node_labels_become_one_hot(tmp_path):
    write_files(tmp_path, "X", A=["1, 2"], graph_indicator=["1"] * 3, graph_labels=["0"],
                node_labels=["0", "1", "1"])
    ds = parse_tu_dataset(tmp_path, "X")
    np.testing.assert_array_equal(ds.graphs[0].features, [[1, 0], [0, 1], [0, 1]])


def test_no_node_information_gives_ones_column(tmp_path):
    write_files(tmp_path, "X", A=["1, 2"], graph_indicator=["1", "1"], graph_labels=["3"])
    ds = parse_tu_dataset(tmp_path, "X")
    np.testing.assert_array_equal(ds.graphs[0].features, [[1.0], [1.0]])


def test_labels_remapped_and_self_loops_dropped(tmp_path):
    write_files(tmp_path, "X", A=["1, 1", "1, 2", "3, 4"], graph_indicator=["1", "1", "2", "2"],
                graph_labels=["-1", "1"])
    ds = parse_tu_dataset(tmp_path, "X")
    assert list(ds.labels) == [0, 1]
    assert ds.graphs[0].adjacency[0, 0] == 0


@pytest.mark.parametrize("files, match", [
    (dict(A=["1, 2"], graph_indicator=["1", "1"]), "missing"),
    (dict(A=["1, 5"], graph_indicator=["1", "1"], graph_labels=["0"]), "out of range"),
    (dict(A=["1, 2"], graph_indicator=["1", "2"], graph_labels=["0", "1"]), "connects graphs"),
    (dict(A=["1, 2"], graph_indicator=["1", "1"], graph_labels=["a"]), "integer"),
])
def test_parse_errors(tmp_path, files, match):
    write_files(tmp_path, "X", **files)
    with pytest.raises(DatasetFormatError, match=match):
        parse_tu_dataset(tmp_path, "X")


@requires_mutag
def test_mutag_statistics():
    ds = parse_tu_dataset(MUTAG_DIR, "MUTAG")
    assert len(ds.graphs) == 188
    assert ds.num_classes == 2
    assert np.mean([g.node_count for g in ds.graphs]) == pytest.approx(17.93, abs=0.005)
    ds = split_dataset(ds)
    assert [len(ds.split[p]) for p in ("train", "val", "test")] == [150, 18, 20]
    assert average_node_count(ds) == 18


def _dataset(n):
    graphs = tuple(Graph(np.zeros((1, 1)), np.ones((1, 1)), i % 2) for i in range(n))
    return GraphDataset(graphs, 2)


def test_split_sizes_and_determinism():
    ds = split_dataset(_dataset(10), seed=3)
    assert [len(ds.split[p]) for p in ("train", "val", "test")] == [8, 1, 1]
    assert split_dataset(_dataset(10), seed=3).split == ds.split


@given(st.integers(3, 60), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_split_partitions_indices(n, seed):
    ds = split_dataset(_dataset(n), seed=seed)
    parts = [set(ds.split[p]) for p in ("train", "val", "test")]
    assert set().union(*parts) == set(range(n))
    assert sum(len(p) for p in parts) == n


def test_split_rejects_bad_ratio():
    with pytest.raises(ValueError):
        split_dataset(_dataset(10), ratios=(1.2, -0.1, -0.1))


def test_normalize_examples():
    np.testing.assert_allclose(normalize_adjacency(np.zeros((1, 1))), [[1.0]])
    np.testing.assert_allclose(normalize_adjacency(np.array([[0, 1], [1, 0]])), [[0.5, 0.5], [0.5, 0.5]])
    cycle = np.roll(np.eye(5), 1, axis=1)
    cycle = cycle + cycle.T
    rows = normalize_adjacency(cycle).sum(axis=1)
    np.testing.assert_allclose(rows, rows[0])


@given(st.integers(1, 7), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_normalized_is_symmetric_with_unit_spectral_radius(n, seed):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.5), 1)
    a_hat = normalize_adjacency(upper + upper.T)
    np.testing.assert_allclose(a_hat, a_hat.T)
    v = np.ones(n)
    for _ in range(200):
        v = a_hat @ v
        v /= np.linalg.norm(v)
    assert np.linalg.norm(a_hat @ v) <= 1 + 1e-9


def test_average_node_count_examples():
    def ds_of(sizes):
        graphs = tuple(Graph(np.zeros((k, k)), np.ones((k, 1)), 0) for k in sizes)
        return split_dataset(GraphDataset(graphs, 1), ratios=(0.8, 0.1, 0.1)) if len(sizes) > 2 else \
            GraphDataset(graphs, 1, split={"train": range(len(sizes)), "val": (), "test": ()})
    assert average_node_count(ds_of([2, 4])) == 3
    assert average_node_count(ds_of([7])) == 7


def test_graph_validation():
    with pytest.raises(ValueError):
        Graph(np.array([[0, 1], [0, 0]]), np.ones((2, 1)), 0)
    with pytest.raises(ValueError):
        Graph(np.eye(2), np.ones((2, 1)), 0)
    with pytest.raises(ValueError):
        Graph(np.zeros((2, 2)), np.ones((3, 1)), 0)


def _random_graphs(rng, count, d=3):
    out = []
    for i in range(count):
        n = int(rng.integers(1, 6))
        upper = np.triu(rng.random((n, n)) < 0.5, 1).astype(float)
        out.append(Graph(upper + upper.T, rng.standard_normal((n, d)), i % 2))
    return out


def test_condensed_round_trip(tmp_path):
    graphs = _random_graphs(np.random.default_rng(0), 4)
    manifest = write_condensed(graphs, tmp_path, name="C", graphs_per_class=2, num_classes=2, seed=7,
                               config={"a": 1}, discretization="threshold")
    ds, back = read_condensed(tmp_path)
    assert back == manifest
    assert back["graphs_per_class"] == 2 and len(ds.graphs) == 4
    for g, h in zip(graphs, ds.graphs):
        np.testing.assert_array_equal(g.adjacency, h.adjacency)
        np.testing.assert_allclose(g.features, h.features, atol=1e-6)
        assert g.label == h.label


def test_condensed_count_mismatch(tmp_path):
    graphs = _random_graphs(np.random.default_rng(1), 3)
    with pytest.raises(ValueError):
        write_condensed(graphs, tmp_path, name="C", graphs_per_class=2, num_classes=2, seed=0,
                        config={}, discretization="threshold")


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_tu_write_parse_round_trip(tmp_path_factory, seed):
    tmp = tmp_path_factory.mktemp("tu")
    graphs = _random_graphs(np.random.default_rng(seed), 5)
    write_tu_dataset(graphs, tmp, "R")
    ds = parse_tu_dataset(tmp, "R")
    for g, h in zip(graphs, ds.graphs):
        np.testing.assert_array_equal(g.adjacency, h.adjacency)
        np.testing.assert_allclose(g.features, h.features, atol=1e-6)


def test_toy_dataset():
    ds = toy_dataset()
    assert ds.num_classes == 2 and ds.feature_dim == 2
    assert {g.node_count for g in ds.graphs} == {3, 4, 5}
    tri = [g for g in ds.graphs if g.label == 0 and g.node_count == 3][0]
    assert tri.edge_count == 3
    assert toy_dataset().split == ds.split
