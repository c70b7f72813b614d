"""GCN and SGC graph classifiers expressed in :mod:`graphcond.autodiff`.

Graphs are processed as a *batch*: node rows of all graphs are stacked and
propagated with a block-diagonal adjacency, so each graph only ever sees its
own normalized adjacency.  A constant pooling matrix maps node rows to graph
rows (``1/n_i`` for mean pooling, ``1`` for sum pooling).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graphs import normalize_adjacency


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "gcn"
    depth: int = 3
    hidden: int = 128
    num_classes: int = 2
    pooling: str = "mean"
    feature_dim: int = 1

    def __post_init__(self):
        if self.arch not in ("gcn", "sgc"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.pooling not in ("mean", "sum"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.depth < 1 or self.hidden < 1 or self.num_classes < 1 or self.feature_dim < 1:
            raise ValueError("depth, hidden, num_classes and feature_dim must be >= 1")

    def param_shapes(self) -> list:
        d, h, c = self.feature_dim, self.hidden, self.num_classes
        if self.arch == "sgc":
            return [(d, h), (h, c)]
        dims = [d] + [h] * self.depth
        return [(dims[i], dims[i + 1]) for i in range(self.depth)] + [(h, c)]

    def param_names(self) -> list:
        if self.arch == "sgc":
            return ["W1", "W2"]
        return [f"W{i}" for i in range(self.depth)] + ["Wc"]


@dataclass(frozen=True)
class InitDistribution:
    """Law used to sample model initializations; only Glorot-uniform is provided."""

    scheme: str = "glorot_uniform"
    scale: float = 1.0

    def __post_init__(self):
        if self.scheme != "glorot_uniform":
            raise ValueError(f"unknown init scheme {self.scheme!r}")
        if self.scale <= 0:
            raise ValueError("init scale must be positive")


def init_params(cfg: ModelConfig, dist: InitDistribution = InitDistribution(), seed=0) -> list:
    """Sample one set of layer weights; ``seed`` may be an int or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    for fan_in, fan_out in cfg.param_shapes():
        bound = dist.scale * np.sqrt(6.0 / (fan_in + fan_out))
        out.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    return out


def param_vars(cfg: ModelConfig, prefix: str = "") -> list:
    return [ad.var(prefix + n, s) for n, s in zip(cfg.param_names(), cfg.param_shapes())]


def bind_params(cfg: ModelConfig, params, prefix: str = "") -> dict:
    return {prefix + n: p for n, p in zip(cfg.param_names(), params)}


@dataclass
class Batch:
    """Stacked graphs ready for a forward pass.

    ``adj`` is either a constant (sparse) matrix or an expression node;
    ``x`` is an expression node; ``pool`` is a constant matrix.
    """

    adj: object
    x: ad.Node
    pool: object
    labels: np.ndarray

    @property
    def size(self):
        return self.pool.shape[0]


def pooling_matrix(sizes, pooling: str):
    rows, cols, vals = [], [], []
    start = 0
    for g, n in enumerate(sizes):
        rows.extend([g] * n)
        cols.extend(range(start, start + n))
        vals.extend([1.0 / n if pooling == "mean" else 1.0] * n)
        start += n
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(sizes), start))


def make_batch(graphs, pooling: str = "mean", normalized=None) -> Batch:
    """Batch of fixed (non-learnable) graphs with constant normalized adjacency."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("empty batch")
    norm = normalized if normalized is not None else [normalize_adjacency(g.adjacency) for g in graphs]
    adj = sp.block_diag(norm, format="csr")
    x = ad.const(np.vstack([g.features for g in graphs]))
    pool = pooling_matrix([g.node_count for g in graphs], pooling)
    return Batch(adj, x, pool, np.array([g.label for g in graphs], dtype=np.int64))


def propagate(adj, h):
    if isinstance(adj, ad.Node):
        return ad.matmul(adj, h)
    return ad.spmm(adj, h)


def _pool(pool, h):
    return ad.spmm(pool, h)


def gcn_embed(batch: Batch, params, cfg: ModelConfig):
    """Pooled output of the last propagation layer (input of the classifier)."""
    h = batch.x
    for layer in range(cfg.depth):
        h = propagate(batch.adj, ad.matmul(h, params[layer]))
        if layer < cfg.depth - 1:
            h = ad.relu(h)
    return _pool(batch.pool, h)


def gcn_forward(batch: Batch, params, cfg: ModelConfig):
    return ad.matmul(gcn_embed(batch, params, cfg), params[-1])


def sgc_embed(batch: Batch, params, cfg: ModelConfig):
    h = batch.x
    for _ in range(cfg.depth):
        h = propagate(batch.adj, h)
    return ad.matmul(_pool(batch.pool, h), params[0])


def sgc_forward(batch: Batch, params, cfg: ModelConfig):
    return ad.matmul(sgc_embed(batch, params, cfg), params[1])


def forward(batch: Batch, params, cfg: ModelConfig):
    if cfg.arch == "gcn":
        return gcn_forward(batch, params, cfg)
    return sgc_forward(batch, params, cfg)


def embed(batch: Batch, params, cfg: ModelConfig):
    if cfg.arch == "gcn":
        return gcn_embed(batch, params, cfg)
    return sgc_embed(batch, params, cfg)


def onehot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label outside [0, {num_classes})")
    return np.eye(num_classes)[labels]


def batch_loss(batch: Batch, params, cfg: ModelConfig):
    """Mean softmax cross-entropy of the batch's per-graph logits."""
    if batch.size == 0:
        raise ValueError("empty batch")
    return ad.softmax_cross_entropy(forward(batch, params, cfg), onehot(batch.labels, cfg.num_classes))


def loss_and_grad_program(batch: Batch, cfg: ModelConfig):
    """Compiled program returning ``[loss, *param_grads]`` for a fixed batch."""
    theta = param_vars(cfg)
    loss = batch_loss(batch, theta, cfg)
    return ad.Program([loss] + ad.gradient(loss, theta))


def fit(graphs, cfg: ModelConfig, epochs: int = 500, lr: float = 0.001, seed=0,
        optimizer: str = "adam", normalized=None) -> list:
    """Full-batch training of a freshly initialized model; returns the final weights."""
    from .optim import make_optimizer

    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    batch = make_batch(graphs, cfg.pooling, normalized=normalized)
    prog = loss_and_grad_program(batch, cfg)
    params = init_params(cfg, InitDistribution(), seed)
    opt = make_optimizer(optimizer, lr)
    for epoch in range(epochs):
        loss, *grads = prog(bind_params(cfg, params))
        if not np.isfinite(loss[0, 0]):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
        opt.step(params, grads)
    return params


def predict_logits(graphs, params, cfg: ModelConfig, normalized=None) -> np.ndarray:
    batch = make_batch(graphs, cfg.pooling, normalized=normalized)
    return ad.evaluate(forward(batch, param_vars(cfg), cfg), bind_params(cfg, params))


def embeddings(graphs, params, cfg: ModelConfig, normalized=None) -> np.ndarray:
    batch = make_batch(graphs, cfg.pooling, normalized=normalized)
    return ad.evaluate(embed(batch, param_vars(cfg), cfg), bind_params(cfg, params))
