"""Graph data model, TU bulk-format I/O and adjacency normalization."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetFormatError(ValueError):
    """Raised when TU files are missing or inconsistent."""


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Graph:
    """One labelled graph with a dense adjacency matrix."""

    adjacency: np.ndarray
    features: np.ndarray
    label: int

    def __post_init__(self):
        adj = _frozen(self.adjacency)
        feats = _frozen(self.features)
        if feats.ndim == 1:
            feats = _frozen(feats.reshape(-1, 1))
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got {adj.shape}")
        if feats.shape[0] != adj.shape[0]:
            raise ValueError("features row count must equal node count")
        if adj.shape[0] < 1:
            raise ValueError("graph needs at least one node")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        if np.any(adj < 0):
            raise ValueError("adjacency must be non-negative")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", int(self.label))

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, 1)))


@dataclass(frozen=True)
class GraphDataset:
    """An ordered collection of graphs with a class partition and a split.

    ``split`` maps ``"train"``, ``"val"`` and ``"test"`` to index tuples; it is
    empty until :func:`split_dataset` has been applied.
    """

    graphs: tuple
    num_classes: int
    name: str = "dataset"
    split: dict = field(default_factory=dict)

    def __post_init__(self):
        graphs = tuple(self.graphs)
        if not graphs:
            raise ValueError("dataset is empty")
        dims = {g.features.shape[1] for g in graphs}
        if len(dims) != 1:
            raise ValueError(f"graphs disagree on feature dimension: {sorted(dims)}")
        for g in graphs:
            if not 0 <= g.label < self.num_classes:
                raise ValueError(f"label {g.label} outside [0, {self.num_classes})")
        object.__setattr__(self, "graphs", graphs)
        split = {k: tuple(int(i) for i in v) for k, v in self.split.items()}
        if split:
            seen = [i for v in split.values() for i in v]
            if sorted(seen) != list(range(len(graphs))):
                raise ValueError("split must partition the graph indices")
        object.__setattr__(self, "split", split)

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].features.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    @property
    def class_index(self) -> dict:
        out = {c: [] for c in range(self.num_classes)}
        for i, g in enumerate(self.graphs):
            out[g.label].append(i)
        return out

    def subset(self, part: str) -> list:
        """Graphs of one split part, in split order."""
        if part not in self.split:
            raise ValueError(f"dataset has no {part!r} split")
        return [self.graphs[i] for i in self.split[part]]

    def class_index_of(self, part: str) -> dict:
        """Class -> dataset indices restricted to a split part."""
        if part not in self.split:
            raise ValueError(f"dataset has no {part!r} split")
        out = {c: [] for c in range(self.num_classes)}
        for i in self.split[part]:
            out[self.graphs[i].label].append(i)
        return out


def _read_ints(path: Path) -> list:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([int(tok) for tok in line.replace(",", " ").split()])
            except ValueError:
                raise DatasetFormatError(f"{path.name}:{lineno}: non-integer value {line!r}") from None
    return rows


def _read_floats(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.replace(",", " ").split()])
    return np.array(rows, dtype=np.float64)


def parse_tu_dataset(directory, name: str) -> GraphDataset:
    """Read a dataset stored in the TU bulk text format.

    Node labels become one-hot columns (one per distinct label value), node
    attributes are appended as real columns, and graphs without any node
    information get a single constant feature.
    """
    directory = Path(directory)
    files = {
        key: directory / f"{name}_{key}.txt"
        for key in ("A", "graph_indicator", "graph_labels", "node_labels", "node_attributes")
    }
    for key in ("A", "graph_indicator", "graph_labels"):
        if not files[key].is_file():
            raise DatasetFormatError(f"missing mandatory file {files[key]}")

    indicator = np.array([r[0] for r in _read_ints(files["graph_indicator"])], dtype=np.int64)
    raw_labels = [r[0] for r in _read_ints(files["graph_labels"])]
    n_graphs = len(raw_labels)
    n_nodes = len(indicator)
    if n_graphs == 0 or n_nodes == 0:
        raise DatasetFormatError("dataset has no graphs")
    if indicator.min() < 1 or indicator.max() > n_graphs:
        raise DatasetFormatError("graph indicator references unknown graph id")
    if np.any(np.diff(indicator) < 0):
        raise DatasetFormatError("graph indicator must be non-decreasing")

    # node id (0-based) -> position inside its graph
    starts = np.searchsorted(indicator, np.arange(1, n_graphs + 2))
    local = np.arange(n_nodes) - starts[indicator - 1]
    sizes = np.diff(starts)
    if np.any(sizes == 0):
        raise DatasetFormatError("a graph has no nodes")

    adjs = [np.zeros((s, s)) for s in sizes]
    for row in _read_ints(files["A"]):
        if len(row) != 2:
            raise DatasetFormatError(f"edge line needs two ids, got {row}")
        i, j = row[0] - 1, row[1] - 1
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise DatasetFormatError(f"node id out of range in edge {row}")
        gi, gj = indicator[i], indicator[j]
        if gi != gj:
            raise DatasetFormatError(f"edge {row} connects graphs {gi} and {gj}")
        if i == j:
            continue
        a = adjs[gi - 1]
        a[local[i], local[j]] = 1.0
        a[local[j], local[i]] = 1.0

    columns = []
    if files["node_labels"].is_file():
        node_labels = np.array([r[0] for r in _read_ints(files["node_labels"])])
        if len(node_labels) != n_nodes:
            raise DatasetFormatError("node label count does not match node count")
        values = np.unique(node_labels)
        columns.append((node_labels[:, None] == values[None, :]).astype(np.float64))
    if files["node_attributes"].is_file():
        attrs = _read_floats(files["node_attributes"])
        if attrs.shape[0] != n_nodes:
            raise DatasetFormatError("node attribute count does not match node count")
        columns.append(attrs)
    feats = np.hstack(columns) if columns else np.ones((n_nodes, 1))

    classes = sorted(set(raw_labels))
    remap = {c: k for k, c in enumerate(classes)}
    graphs = [
        Graph(adjs[g], feats[starts[g]:starts[g + 1]], remap[raw_labels[g]])
        for g in range(n_graphs)
    ]
    return GraphDataset(tuple(graphs), len(classes), name=name)


def split_dataset(ds: GraphDataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> GraphDataset:
    """Random train/val/test split; sizes are floor(r*N) with the remainder in test."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(not 0 < r < 1 for r in ratios):
        raise ValueError(f"ratios must be three values in (0, 1), got {ratios}")
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError("ratios must sum to 1")
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(ratios[0] * n + 1e-9))
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    split = {
        "train": perm[:n_train].tolist(),
        "val": perm[n_train:n_train + n_val].tolist(),
        "test": perm[n_train + n_val:].tolist(),
    }
    return GraphDataset(ds.graphs, ds.num_classes, name=ds.name, split=split)


def normalize_adjacency(adj) -> np.ndarray:
    """Symmetric GCN normalization D^-1/2 (A + I) D^-1/2 (weighted A allowed)."""
    a = np.asarray(adj, dtype=np.float64) + np.eye(len(adj))
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


def average_node_count(ds: GraphDataset) -> int:
    """Mean node count of the training graphs, rounded half up."""
    train = ds.split.get("train", ())
    if not train:
        raise ValueError("average_node_count needs a non-empty training split")
    mean = float(np.mean([ds.graphs[i].node_count for i in train]))
    return int(math.floor(mean + 0.5))


# ---------------------------------------------------------------------------
# condensed-set serialization

MANIFEST = "manifest.json"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_tu_dataset(graphs, directory, name: str):
    """Write graphs as TU bulk files; features go to ``_node_attributes.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not os.access(directory, os.W_OK):
        raise PermissionError(f"cannot write to {directory}")
    edges, indicator, labels, attrs = [], [], [], []
    offset = 0
    for gid, g in enumerate(graphs, 1):
        ii, jj = np.nonzero(g.adjacency)
        for i, j in zip(ii, jj):
            edges.append(f"{i + 1 + offset}, {j + 1 + offset}")
        indicator.extend([str(gid)] * g.node_count)
        labels.append(str(g.label))
        attrs.extend(", ".join(repr(float(v)) for v in row) for row in g.features)
        offset += g.node_count

    def dump(key, lines):
        (directory / f"{name}_{key}.txt").write_text("".join(line + "\n" for line in lines))

    dump("A", edges)
    dump("graph_indicator", indicator)
    dump("graph_labels", labels)
    dump("node_attributes", attrs)


def write_condensed(graphs, directory, *, name, graphs_per_class, num_classes,
                    seed, config, discretization, extra=None):
    """Write a discretized condensed set plus its JSON manifest."""
    graphs = list(graphs)
    if graphs_per_class * num_classes != len(graphs):
        raise ValueError("graphs_per_class * num_classes must equal the number of graphs")
    write_tu_dataset(graphs, directory, name)
    manifest = {
        "name": name,
        "graphs_per_class": int(graphs_per_class),
        "node_count": int(max(g.node_count for g in graphs)),
        "feature_dim": int(graphs[0].features.shape[1]),
        "classes": [int(g.label) for g in graphs],
        "num_classes": int(num_classes),
        "seed": int(seed),
        "config_hash": config_hash(config),
        "discretization": discretization,
    }
    if extra:
        manifest.update(extra)
    (Path(directory) / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_condensed(directory):
    """Read a condensed set written by :func:`write_condensed`.

    Returns ``(dataset, manifest)``; every condensed graph is in the train split.
    """
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.is_file():
        raise DatasetFormatError(f"no manifest in {directory}")
    manifest = json.loads(path.read_text())
    ds = parse_tu_dataset(directory, manifest["name"])
    labels = [g.label for g in ds.graphs]
    # parse remaps labels to contiguous ids; undo it against the manifest
    classes = sorted(set(manifest["classes"]))
    graphs = [Graph(g.adjacency, g.features, classes[g.label]) for g in ds.graphs]
    if [g.label for g in graphs] != manifest["classes"]:
        raise DatasetFormatError(f"labels {labels} disagree with manifest")
    if len(graphs) != manifest["graphs_per_class"] * manifest["num_classes"]:
        raise DatasetFormatError("graph count disagrees with manifest")
    if ds.feature_dim != manifest["feature_dim"]:
        raise DatasetFormatError("feature dimension disagrees with manifest")
    out = GraphDataset(tuple(graphs), manifest["num_classes"], name=manifest["name"],
                       split={"train": range(len(graphs)), "val": (), "test": ()})
    return out, manifest


# ---------------------------------------------------------------------------
# built-in toy dataset

def _toy_graph(kind, n, perm):
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    if kind == "triangle":
        a[0, 2] = a[2, 0] = 1.0
    a = a[np.ix_(perm, perm)]
    deg = a.sum(axis=1)
    feats = np.stack([np.ones(n), deg], axis=1)
    return a, feats


def toy_dataset(per_class: int = 50, seed: int = 0) -> GraphDataset:
    """Triangles (a 3-cycle with a tail) against paths, 3 to 5 nodes.

    Features are a constant column and the node degree.  Deterministic for a
    given seed; already split 80/10/10.
    """
    rng = np.random.default_rng(seed)
    graphs = []
    for label, kind in enumerate(("triangle", "path")):
        for k in range(per_class):
            n = 3 + k % 3
            a, x = _toy_graph(kind, n, rng.permutation(n))
            graphs.append(Graph(a, x, label))
    return split_dataset(GraphDataset(tuple(graphs), 2, name="TOY"), seed=seed)
