"""Coreset selectors (random, herding, k-center) and the feature-only matching baseline."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .condense import CondenseConfig, condense, condense_features_only, to_graphs
from .graphs import GraphDataset
from .models import ModelConfig, embeddings, fit

METHODS = ("doscond", "random", "herding", "kcenter", "dcg")


@dataclass(frozen=True)
class EmbeddingTable:
    """Graph-level embeddings of the training graphs, keyed by dataset index."""

    indices: np.ndarray
    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not (len(self.indices) == len(self.vectors) == len(self.labels)):
            raise ValueError("indices, vectors and labels must align")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embeddings must be finite")

    def save(self, path) -> None:
        np.savez(path, indices=self.indices, vectors=self.vectors, labels=self.labels)

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        with np.load(path) as z:
            return cls(z["indices"], z["vectors"], z["labels"])


def pretrain_embeddings(ds: GraphDataset, cfg: ModelConfig, epochs: int = 500, seed: int = 0,
                        lr: float = 0.001) -> EmbeddingTable:
    """Train a GCN on the real training split and return pooled penultimate features."""
    idx = np.array(ds.split["train"])
    if idx.size == 0:
        raise ValueError("empty training split")
    graphs = [ds.graphs[i] for i in idx]
    params = fit(graphs, cfg, epochs=epochs, lr=lr, seed=seed)
    return EmbeddingTable(idx, embeddings(graphs, params, cfg), np.array([g.label for g in graphs]))


def cached_embeddings(ds: GraphDataset, cfg: ModelConfig, cache_dir, epochs: int = 500,
                      seed: int = 0) -> EmbeddingTable:
    """Load embeddings from ``cache_dir`` or pretrain and store them there."""
    path = Path(cache_dir) / f"embeddings_{ds.name}_{cfg.arch}{cfg.depth}x{cfg.hidden}_{cfg.pooling}_e{epochs}_s{seed}.npz"
    if path.exists():
        return EmbeddingTable.load(path)
    table = pretrain_embeddings(ds, cfg, epochs, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.save(path)
    return table


def random_select(ds: GraphDataset, m: int, seed: int = 0) -> np.ndarray:
    if m < 1:
        raise ValueError("m must be >= 1")
    out = []
    for c, pool in ds.class_index_of("train").items():
        if not pool:
            raise ValueError(f"class {c} has no training graphs")
        rng = np.random.default_rng([seed, c])
        out.extend(rng.choice(pool, size=m, replace=len(pool) < m))
    return np.array(out, dtype=np.int64)


def _per_class(emb: EmbeddingTable, m: int, pick) -> np.ndarray:
    if m < 1:
        raise ValueError("m must be >= 1")
    out = []
    for c in np.unique(emb.labels):
        rows = np.flatnonzero(emb.labels == c)
        if m > rows.size:
            raise ValueError(f"m={m} exceeds class {c} size {rows.size}")
        out.extend(emb.indices[rows[pick(emb.vectors[rows], m)]])
    return np.array(out, dtype=np.int64)


TIE_RTOL = 1e-9


def _first_min(values) -> int:
    """Lowest index whose value is within rounding of the minimum."""
    best = values.min()
    return int(np.flatnonzero(values <= best + TIE_RTOL * max(1.0, abs(best)))[0])


def herding_order(x: np.ndarray, m: int) -> list:
    """Greedy herding on the rows of ``x``; positions into ``x``."""
    mu = x.mean(axis=0)
    chosen, total = [], np.zeros_like(mu)
    free = np.ones(len(x), dtype=bool)
    for k in range(m):
        dist = np.linalg.norm(mu - (total + x) / (k + 1), axis=1)
        dist[~free] = np.inf
        i = _first_min(dist)
        chosen.append(i)
        free[i] = False
        total = total + x[i]
    return chosen


def kcenter_order(x: np.ndarray, m: int) -> list:
    """Farthest-first traversal seeded at the point closest to the mean."""
    first = _first_min(np.linalg.norm(x - x.mean(axis=0), axis=1))
    chosen = [first]
    nearest = np.linalg.norm(x - x[first], axis=1)
    for _ in range(m - 1):
        cand = np.where(np.isin(np.arange(len(x)), chosen), np.inf, -nearest)
        i = _first_min(cand)
        chosen.append(i)
        nearest = np.minimum(nearest, np.linalg.norm(x - x[i], axis=1))
    return chosen


def herding_select(emb: EmbeddingTable, m: int) -> np.ndarray:
    return _per_class(emb, m, herding_order)


def kcenter_select(emb: EmbeddingTable, m: int) -> np.ndarray:
    return _per_class(emb, m, kcenter_order)


def dcg_condense(ds: GraphDataset, cfg: CondenseConfig, jobs: int = 1):
    return condense_features_only(ds, cfg, jobs=jobs)


def selected_graphs(ds: GraphDataset, indices) -> list:
    return [ds.graphs[int(i)] for i in indices]


def condensed_graphs(ds: GraphDataset, method: str, cfg: CondenseConfig, *, discretization="threshold",
                     pretrain_epochs: int = 500, cache_dir=None, jobs: int = 1) -> list:
    """Produce the training graphs a method hands to the evaluator."""
    if method == "doscond":
        return to_graphs(condense(ds, cfg, jobs=jobs), discretization, cfg.seed)
    if method == "dcg":
        return to_graphs(dcg_condense(ds, cfg, jobs=jobs), "threshold", cfg.seed)
    if method == "random":
        return selected_graphs(ds, random_select(ds, cfg.gpc, cfg.seed))
    if method in ("herding", "kcenter"):
        mcfg = cfg.model(ds.feature_dim, ds.num_classes)
        if cache_dir is None:
            emb = pretrain_embeddings(ds, mcfg, pretrain_epochs, cfg.seed)
        else:
            emb = cached_embeddings(ds, mcfg, cache_dir, pretrain_epochs, cfg.seed)
        select = herding_select if method == "herding" else kcenter_select
        return selected_graphs(ds, select(emb, cfg.gpc))
    raise ValueError(f"unknown method {method!r}")

