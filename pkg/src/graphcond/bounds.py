"""Diagnostics for the loss-gap bound of one-step matching with a linear SGC.

With ``f(A, X) = Pool(A^K X W1) W2`` the model is linear in ``W = W1 W2``, so
on graph ``i`` the logits are ``z_i W`` with ``z_i = g_i 1^T A_i^K X_i`` and
``g_i`` equal to 1 (sum pooling) or ``1/n_i`` (mean pooling).  The mean
cross-entropy is then convex in ``W``, which makes the optimum ``W*`` reachable by
plain gradient descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graphs import Graph, normalize_adjacency
from .models import Batch, ModelConfig, batch_loss, bind_params, param_vars, pooling_matrix


@dataclass(frozen=True)
class BoundCheckConfig:
    T: int = 100
    M: float | None = None
    depth: int = 2
    pooling: str = "mean"
    star_steps: int = 100_000
    star_lr: float = 0.01
    star_tol: float = 1e-8
    max_fixed_point: int = 200

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.M is not None and self.M <= 0:
            raise ValueError("M must be positive")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.pooling not in ("mean", "sum"):
            raise ValueError(f"unknown pooling {self.pooling!r}")


def gamma(n: int, pooling: str) -> float:
    return 1.0 if pooling == "sum" else 1.0 / n


def propagated_sums(norm_adjs, feats, depth: int) -> np.ndarray:
    """Rows ``1^T A_i^K X_i`` for each graph."""
    out = []
    for a, x in zip(norm_adjs, feats):
        z = np.asarray(x, dtype=np.float64)
        for _ in range(depth):
            z = a @ z
        out.append(z.sum(axis=0))
    return np.array(out)


def norm_radicand(norm_adjs, feats, depth: int, pooling: str) -> float:
    """``sum_i gamma_i ||1^T A_i^K X_i||^2``."""
    sums = propagated_sums(norm_adjs, feats, depth)
    gam = np.array([gamma(a.shape[0], pooling) for a in norm_adjs])
    return float(np.sum(gam * np.sum(sums ** 2, axis=1)))


def l2_term(norm_adjs, feats, depth, T, num_classes, pooling) -> float:
    c, n_syn = num_classes, len(norm_adjs)
    pref = 3.0 / (2.0 * math.sqrt(T)) * (c - 1) / (c * n_syn)
    return pref * math.sqrt(norm_radicand(norm_adjs, feats, depth, pooling))


def _sgc_grads(norm_adjs, feats, labels, params, mcfg: ModelConfig) -> np.ndarray:
    sizes = [a.shape[0] for a in norm_adjs]
    import scipy.sparse as sp

    batch = Batch(sp.block_diag([sp.csr_matrix(a) for a in norm_adjs], format="csr"),
                  ad.const(np.vstack(feats)), pooling_matrix(sizes, mcfg.pooling), np.asarray(labels))
    theta = param_vars(mcfg)
    grads = ad.Program(ad.gradient(batch_loss(batch, theta, mcfg), theta))(bind_params(mcfg, params))
    return np.concatenate([g.ravel() for g in grads])


def bound_terms(real_graphs, syn_adjs, syn_feats, syn_labels, params, mcfg: ModelConfig, T: int = 500):
    """(l1, l2) at ``params`` for an SGC model.

    ``syn_adjs`` are raw (possibly weighted) adjacencies; they are normalized
    here.  ``l1`` uses the Frobenius norm of the concatenated gradient gap.
    """
    if mcfg.arch != "sgc":
        raise ValueError("bound terms are defined for the SGC model")
    real_norm = [normalize_adjacency(g.adjacency) for g in real_graphs]
    syn_norm = [normalize_adjacency(a) for a in syn_adjs]
    g_t = _sgc_grads(real_norm, [g.features for g in real_graphs], [g.label for g in real_graphs],
                     params, mcfg)
    g_s = _sgc_grads(syn_norm, syn_feats, syn_labels, params, mcfg)
    l1 = math.sqrt(2.0) * float(np.linalg.norm(g_t - g_s))
    l2 = l2_term(syn_norm, syn_feats, mcfg.depth, T, mcfg.num_classes, mcfg.pooling)
    return l1, l2


# ---------------------------------------------------------------------------
# linear-model oracle

@dataclass
class LinearProblem:
    """Mean cross-entropy of ``Z W`` against one-hot ``Y``."""

    Z: np.ndarray
    Y: np.ndarray

    @classmethod
    def from_graphs(cls, norm_adjs, feats, labels, depth, pooling, num_classes):
        sums = propagated_sums(norm_adjs, feats, depth)
        gam = np.array([gamma(a.shape[0], pooling) for a in norm_adjs])
        return cls(sums * gam[:, None], np.eye(num_classes)[np.asarray(labels)])

    def loss(self, w) -> float:
        logits = self.Z @ w
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        return float(np.mean(lse - np.sum(logits * self.Y, axis=1)))

    def grad(self, w) -> np.ndarray:
        logits = self.Z @ w
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        return self.Z.T @ (p - self.Y) / len(self.Z)


def optimum(problem: LinearProblem, steps=100_000, lr=0.01, tol=1e-8) -> tuple:
    """Gradient descent from zero until the gradient norm drops below ``tol``."""
    w = np.zeros((problem.Z.shape[1], problem.Y.shape[1]))
    for step in range(steps):
        g = problem.grad(w)
        if np.linalg.norm(g) < tol:
            return w, step
        w -= lr * g
    raise RuntimeError(f"optimum not reached in {steps} steps (grad norm {np.linalg.norm(g):.3e})")


@dataclass
class Theorem1Result:
    lhs: float
    rhs: float
    gap_sum: float
    norm_part: float
    M: float
    eta: float
    star_steps: int

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 1e-9


def _trajectory(syn: LinearProblem, w0, eta, T):
    ws = [w0.copy()]
    for _ in range(T - 1):
        ws.append(ws[-1] - eta * syn.grad(ws[-1]))
    return ws


def theorem1_check(real: LinearProblem, syn: LinearProblem, radicand: float, num_classes: int,
                   cfg: BoundCheckConfig = BoundCheckConfig(), w0=None) -> Theorem1Result:
    """Train on the synthetic problem for T steps and compare the loss gap with its bound.

    ``radicand`` is ``sum_i gamma_i ||1^T A_i^K X_i||^2`` of the synthetic
    graphs.  Unless ``cfg.M`` is given, M is the smallest fixed point of
    ``M = max(||W*||, max_t ||W_t||)`` reached by iteration, so every visited
    parameter (and the optimum) lies in the M-ball.
    """
    if radicand <= 0:
        raise ValueError("synthetic graphs have zero propagated features")
    w_star, star_steps = optimum(real, cfg.star_steps, cfg.star_lr, cfg.star_tol)
    loss_star = real.loss(w_star)
    if w0 is None:
        w0 = np.zeros_like(w_star)
    s, T = math.sqrt(radicand), cfg.T
    star_norm = float(np.linalg.norm(w_star))
    M = cfg.M if cfg.M is not None else max(star_norm, float(np.linalg.norm(w0)), 1e-12)
    for _ in range(cfg.max_fixed_point):
        eta = M / (math.sqrt(T) * s)
        ws = _trajectory(syn, w0, eta, T)
        if cfg.M is not None:
            break
        reach = max(star_norm, max(float(np.linalg.norm(w)) for w in ws))
        if reach <= M * (1 + 1e-12):
            break
        M = reach
    else:
        raise RuntimeError("norm bound M did not settle")
    lhs = min(real.loss(w) for w in ws) - loss_star
    gap_sum = sum(float(np.linalg.norm(real.grad(w) - syn.grad(w))) for w in ws)
    c, n_syn = num_classes, len(syn.Z)
    norm_part = 3.0 * M / (2.0 * math.sqrt(T)) * (c - 1) / (c * n_syn) * s
    rhs = math.sqrt(2.0) * M / T * gap_sum + norm_part
    return Theorem1Result(lhs, rhs, gap_sum, norm_part, M, eta, star_steps)


def random_graph(rng, n, p, d, shift=0.0, label=0) -> Graph:
    upper = np.triu(rng.random((n, n)) < p, 1).astype(np.float64)
    x = rng.standard_normal((n, d)) + shift
    return Graph(upper + upper.T, x, label)


def random_instance(seed: int, n_real: int = 24, n_syn_per_class: int = 1, d: int = 3, num_classes: int = 2,
                    cfg: BoundCheckConfig = BoundCheckConfig()):
    """Random non-separable real set and an unrelated random synthetic set."""
    rng = np.random.default_rng(seed)
    shifts = rng.standard_normal((num_classes, d)) * 0.5
    real = [random_graph(rng, int(rng.integers(3, 7)), 0.5, d, shifts[i % num_classes], i % num_classes)
            for i in range(n_real)]
    # relabelled copies of d graphs: their propagated features span R^d, so no
    # direction separates the data and the optimum is finite
    real += [Graph(g.adjacency, g.features, (g.label + 1) % num_classes) for g in real[:d]]
    syn = [random_graph(rng, int(rng.integers(3, 7)), 0.5, d, 0.0, c)
           for c in range(num_classes) for _ in range(n_syn_per_class)]
    return real, syn


def problems_from_graphs(real, syn, cfg: BoundCheckConfig, num_classes: int):
    rn = [normalize_adjacency(g.adjacency) for g in real]
    sn = [normalize_adjacency(g.adjacency) for g in syn]
    rp = LinearProblem.from_graphs(rn, [g.features for g in real], [g.label for g in real],
                                   cfg.depth, cfg.pooling, num_classes)
    sp_ = LinearProblem.from_graphs(sn, [g.features for g in syn], [g.label for g in syn],
                                    cfg.depth, cfg.pooling, num_classes)
    radicand = norm_radicand(sn, [g.features for g in syn], cfg.depth, cfg.pooling)
    return rp, sp_, radicand


def theorem1_trials(trials: int = 5, cfg: BoundCheckConfig = BoundCheckConfig(), seed: int = 0) -> list:
    out = []
    for t in range(trials):
        real, syn = random_instance(seed * 1000 + t, cfg=cfg)
        rp, sp_, rad = problems_from_graphs(real, syn, cfg, 2)
        w0 = np.random.default_rng([seed, t]).uniform(-1.0, 1.0, size=(rp.Z.shape[1], 2))
        out.append(theorem1_check(rp, sp_, rad, 2, cfg, w0=w0))
    return out


def theorem2_terms(real_adj, real_x, real_y, syn_adj, syn_x, syn_y, w, *, depth: int, T: int, M: float,
                   num_classes: int):
    """Node-classification analogue: (l1, (3M/(2 sqrt T)) ((C-1)/(C N')) ||A'^K X'||).

    Adjacencies are used as given (pass normalized matrices); the model is
    ``A^K X W`` with mean cross-entropy over nodes.
    """
    def problem(a, x, y):
        z = np.asarray(x, dtype=np.float64)
        for _ in range(depth):
            z = np.asarray(a) @ z
        return LinearProblem(z, np.eye(num_classes)[np.asarray(y)]), z

    pt, _ = problem(real_adj, real_x, real_y)
    ps, zs = problem(syn_adj, syn_x, syn_y)
    l1 = math.sqrt(2.0) * float(np.linalg.norm(pt.grad(w) - ps.grad(w)))
    c, n_syn = num_classes, zs.shape[0]
    second = 3.0 * M / (2.0 * math.sqrt(T)) * (c - 1) / (c * n_syn) * float(np.linalg.norm(zs))
    return l1, second
