"""Learning a small synthetic graph set by one-step gradient matching.

Each synthetic graph has strictly-upper-triangular edge logits ``omega`` and a
dense feature matrix.  During training the adjacency is a binary-concrete
sample ``sigmoid((logit(alpha) + omega) / tau)``; gradients of the model loss on
the synthetic graphs (taken at a freshly sampled initialization) are matched
to gradients on a batch of real graphs of the same class.

Classes never interact: every class has its own RNG stream for initialization
and real batches, and its own sparsity term, so classes can be condensed in
parallel with bit-identical results.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import autodiff as ad
from .graphs import Graph, GraphDataset, average_node_count, normalize_adjacency
from .models import (Batch, InitDistribution, ModelConfig, batch_loss, bind_params, init_params,
                     make_batch, param_vars, pooling_matrix)
from .optim import make_optimizer

log = logging.getLogger(__name__)

EDGE_LOGIT = 5.0
COS_EPS = 1e-6

# RNG stream tags; streams are keyed by (seed, tag, ...) so they never collide.
_THETA, _ALPHA, _BATCH, _INIT, _DISCRETE = range(5)


@dataclass(frozen=True)
class TauSchedule:
    tau0: float = 1.0
    tau_final: float = 0.1
    rate: float = 0.0

    @classmethod
    def for_steps(cls, k1: int, tau0: float = 1.0, tau_final: float = 0.1, rate=None):
        """Exponential decay reaching ``tau_final`` half way through ``k1`` steps."""
        if tau0 <= 0 or tau_final <= 0:
            raise ValueError("temperatures must be positive")
        if rate is None:
            half = max(k1 / 2.0, 1.0)
            rate = math.log(tau0 / tau_final) / half if tau0 > tau_final else 0.0
        return cls(tau0, tau_final, rate)


def anneal_tau(schedule: TauSchedule, k: int) -> float:
    return max(schedule.tau_final, schedule.tau0 * math.exp(-schedule.rate * k))


@dataclass
class CondenseConfig:
    gpc: int = 1
    k1: int = 1000
    k2: int = 1
    lr_omega: float = 1.0
    lr_feat: float = 0.01
    beta: float = 0.1
    epsilon: float | None = None
    tau0: float = 1.0
    tau_final: float = 0.1
    tau_rate: float | None = None
    batch: int = 256
    optimizer: str = "sgd"
    norm_T: int = 500
    arch: str = "gcn"
    depth: int = 3
    hidden: int = 128
    pooling: str = "mean"
    seed: int = 0

    def __post_init__(self):
        if self.gpc < 1:
            raise ValueError("gpc must be >= 1")
        if self.k1 < 0 or self.k2 < 1:
            raise ValueError("k1 must be >= 0 and k2 >= 1")
        if self.lr_omega <= 0 or self.lr_feat <= 0:
            raise ValueError("learning rates must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.epsilon is not None and not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.tau0 <= 0 or self.tau_final <= 0:
            raise ValueError("tau must be positive")
        if self.batch < 1 or self.norm_T < 1:
            raise ValueError("batch and norm_T must be >= 1")

    def model(self, feature_dim: int, num_classes: int) -> ModelConfig:
        return ModelConfig(self.arch, self.depth, self.hidden, num_classes, self.pooling, feature_dim)

    def schedule(self, steps=None) -> TauSchedule:
        return TauSchedule.for_steps(self.k1 if steps is None else steps, self.tau0,
                                     self.tau_final, self.tau_rate)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SyntheticSet:
    """Learnable condensed set: ``omega`` is (N', n, n) and strictly upper triangular."""

    omega: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    tau: float = 1.0
    epsilon: np.ndarray = None
    log: list = field(default_factory=list)

    @property
    def node_count(self) -> int:
        return self.omega.shape[1]

    @property
    def gpc(self) -> int:
        return len(self.labels) // self.num_classes

    def class_slots(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def copy(self):
        return dataclasses.replace(self, omega=self.omega.copy(), features=self.features.copy(),
                                   labels=self.labels.copy(),
                                   epsilon=None if self.epsilon is None else self.epsilon.copy(),
                                   log=list(self.log))


# ---------------------------------------------------------------------------
# structure helpers

def upper_mask(n: int) -> np.ndarray:
    return np.triu(np.ones((n, n)), 1)


def symmetrize_upper(upper) -> np.ndarray:
    u = np.triu(upper, 1)
    return u + u.T


def open_uniform(rng, shape) -> np.ndarray:
    """Uniform draws strictly inside (0, 1)."""
    return (rng.integers(0, 2 ** 53, size=shape) + 0.5) / 2.0 ** 53


def logistic_noise(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0) or np.any(alpha >= 1):
        raise ValueError("alpha must lie strictly inside (0, 1)")
    return np.log(alpha) - np.log1p(-alpha)


def sample_relaxed_adjacency(omega, tau: float, alpha) -> np.ndarray:
    """Binary-concrete relaxed adjacency of one graph (numpy, no gradients)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    omega = np.asarray(omega, dtype=np.float64)
    n = omega.shape[0]
    noise = logistic_noise(np.where(upper_mask(n) > 0, alpha, 0.5))
    return symmetrize_upper(ad._sigmoid((noise + omega) / tau))


def relaxed_adjacency_expr(omega, noise, inv_tau, mask):
    """Expression version: mirrored, zero-diagonal, differentiable in ``omega``."""
    u = ad.mul(ad.sigmoid(ad.smul(ad.add(noise, omega), inv_tau)), mask)
    return ad.add(u, ad.transpose(u))


def normalize_adjacency_expr(a):
    n = a.shape[0]
    a_tilde = ad.add(a, ad.const(np.eye(n)))
    dinv = ad.power(ad.row_sum(a_tilde), -0.5)
    return ad.mul(ad.matmul(dinv, ad.transpose(dinv)), a_tilde)


def discretize(syn: SyntheticSet, mode: str = "threshold", seed: int = 0) -> list:
    """Binary adjacency per synthetic graph (threshold: omega > 0; sample: Bernoulli)."""
    if mode == "threshold":
        uppers = [(om > 0).astype(np.float64) for om in syn.omega]
    elif mode == "sample":
        rng = np.random.default_rng([seed, _DISCRETE])
        probs = ad._sigmoid(syn.omega)
        uppers = [(rng.random(p.shape) < p).astype(np.float64) for p in probs]
    else:
        raise ValueError(f"unknown discretization mode {mode!r}")
    return [symmetrize_upper(u) for u in uppers]


def to_graphs(syn: SyntheticSet, mode: str = "threshold", seed: int = 0) -> list:
    return [Graph(a, x, int(y)) for a, x, y in zip(discretize(syn, mode, seed), syn.features, syn.labels)]


# ---------------------------------------------------------------------------
# losses

def match_distance(gs, gt):
    """Sum over parameter matrices and output columns of 1 - cosine similarity.

    ``gt`` entries are treated as constants (arrays or expressions that do not
    depend on the differentiated variables).
    """
    if len(gs) != len(gt):
        raise ValueError("gradient lists differ in length")
    total = None
    for a, b in zip(gs, gt):
        if not isinstance(b, ad.Node):
            b = ad.const(b)
        if a.shape != b.shape:
            raise ad.ShapeError(f"gradient shapes {a.shape} and {b.shape} differ")
        dot = ad.col_sum(ad.mul(a, b))
        na = ad.power(ad.addc(ad.col_sum(ad.mul(a, a)), 1e-30), 0.5)
        nb = ad.power(ad.addc(ad.col_sum(ad.mul(b, b)), 1e-30), 0.5)
        cos = ad.mul(dot, ad.power(ad.addc(ad.mul(na, nb), COS_EPS), -1.0))
        term = ad.addc(ad.scale(ad.total(cos), -1.0), float(a.shape[1]))
        total = term if total is None else ad.add(total, term)
    return total


def match_distance_value(gs, gt) -> float:
    out = 0.0
    for a, b in zip(gs, gt):
        dot = (a * b).sum(axis=0)
        den = np.sqrt((a * a).sum(axis=0) + 1e-30) * np.sqrt((b * b).sum(axis=0) + 1e-30) + COS_EPS
        out += float(np.sum(1.0 - dot / den))
    return out


def sparsity_reg(omega, epsilon: float) -> float:
    """max(mean sigmoid(omega) over upper entries - epsilon, 0) for (N', n, n) logits."""
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim == 2:
        omega = omega[None]
    n = omega.shape[-1]
    iu = np.triu_indices(n, 1)
    vals = ad._sigmoid(omega[:, iu[0], iu[1]])
    return max(float(vals.mean()) - epsilon, 0.0)


def norm_reg_value(norm_adjs, feats, depth, T, num_classes, n_syn, pooling) -> float:
    """(3 / (2 sqrt(2T))) * ((C-1)/(C N')) * sqrt(sum_i gamma_i ||1^T A_i^K X_i||^2)."""
    radicand = 0.0
    for a, x in zip(norm_adjs, feats):
        z = x
        for _ in range(depth):
            z = a @ z
        gamma = 1.0 if pooling == "sum" else 1.0 / a.shape[0]
        radicand += gamma * float(np.sum(z.sum(axis=0) ** 2))
    c = num_classes
    return 3.0 / (2.0 * math.sqrt(2.0 * T)) * (c - 1) / (c * n_syn) * math.sqrt(radicand)


def _norm_reg_expr(a_hat, xs, pool_sum, gammas, depth, T, num_classes, n_syn):
    z = xs
    for _ in range(depth):
        z = ad.matmul(a_hat, z)
    colsums = ad.spmm(pool_sum, z)
    weighted = ad.spmm(np.diag(np.sqrt(gammas)), colsums)
    c = num_classes
    pref = 3.0 / (2.0 * math.sqrt(2.0 * T)) * (c - 1) / (c * n_syn)
    return ad.scale(ad.power(ad.addc(ad.frob_sq(weighted), 1e-30), 0.5), pref)


# ---------------------------------------------------------------------------
# per-class matching program

class ClassProgram:
    """Compiled one-step matching loss and its gradients for one class's slots.

    Variables: ``omega`` and ``noise`` (R x R block diagonal, R = slots * n),
    ``inv_tau`` (1 x 1), ``xs`` (R x d), model weights, and ``gt*`` (real-data
    gradients bound as constants).
    """

    def __init__(self, mcfg: ModelConfig, n: int, slots: int, label: int, *, beta: float,
                 epsilon: float, learn_structure: bool = True, norm_reg: bool = False,
                 norm_T: int = 500, n_syn: int = 1):
        self.mcfg, self.n, self.slots = mcfg, n, slots
        self.learn_structure = learn_structure
        r = n * slots
        self.omega = ad.var("omega", (r, r))
        self.noise = ad.var("noise", (r, r))
        self.inv_tau = ad.var("inv_tau", (1, 1))
        self.xs = ad.var("xs", (r, mcfg.feature_dim))
        self.fixed_adj = ad.var("fixed_adj", (r, r))
        self.theta = param_vars(mcfg)
        self.gt = [ad.var(f"gt{i}", s) for i, s in enumerate(mcfg.param_shapes())]

        mask = ad.const(scipy.linalg.block_diag(*[upper_mask(n)] * slots))
        if learn_structure:
            a_hat = normalize_adjacency_expr(relaxed_adjacency_expr(self.omega, self.noise,
                                                                    self.inv_tau, mask))
        else:
            a_hat = self.fixed_adj
        pool = pooling_matrix([n] * slots, mcfg.pooling)
        batch = Batch(a_hat, self.xs, pool, np.full(slots, label))
        loss_s = batch_loss(batch, self.theta, mcfg)
        gs = ad.gradient(loss_s, self.theta)
        self.match = match_distance(gs, self.gt)
        objective = self.match
        self.reg = ad.const(np.zeros((1, 1)))
        if learn_structure and beta > 0:
            count = slots * n * (n - 1) / 2
            mean_sig = ad.scale(ad.total(ad.mul(ad.sigmoid(self.omega), mask)), 1.0 / count)
            self.reg = ad.relu(ad.addc(mean_sig, -epsilon))
            objective = ad.add(objective, ad.scale(self.reg, beta))
        self.norm = ad.const(np.zeros((1, 1)))
        if norm_reg:
            gammas = np.ones(slots) if mcfg.pooling == "sum" else np.full(slots, 1.0 / n)
            self.norm = _norm_reg_expr(a_hat, self.xs, pooling_matrix([n] * slots, "sum"), gammas,
                                       mcfg.depth, norm_T, mcfg.num_classes, n_syn)
            objective = ad.add(objective, self.norm)
        self.objective = objective
        wrt = [self.omega, self.xs] if learn_structure else [self.xs]
        grads = ad.gradient(objective, wrt)
        if not learn_structure:
            grads = [ad.zeros(self.omega.shape)] + grads
        self.program = ad.Program([self.objective, self.match, self.reg, self.norm] + grads)

    def run(self, binding):
        obj, match, reg, norm, g_omega, g_xs = self.program(binding)
        return float(obj[0, 0]), float(match[0, 0]), float(reg[0, 0]), float(norm[0, 0]), g_omega, g_xs


def one_step_loss(params, mcfg: ModelConfig, omega, features, label: int, real_graphs, tau: float,
                  alpha, *, beta: float = 0.0, epsilon: float = 0.0):
    """Matching objective for one class slice at weights ``params``.

    ``omega`` is (slots, n, n) upper-triangular, ``features`` (slots, n, d) and
    ``alpha`` (slots, n, n).  Returns ``(program, binding)``; the program's
    ``objective`` node is differentiable in ``program.omega`` (block diagonal)
    and ``program.xs`` (stacked rows).
    """
    omega = np.asarray(omega, dtype=np.float64)
    slots, n = omega.shape[0], omega.shape[1]
    prog = ClassProgram(mcfg, n, slots, label, beta=beta, epsilon=epsilon)
    gt = real_gradients(real_graphs, [normalize_adjacency(g.adjacency) for g in real_graphs], params, mcfg)
    binding = bind_params(mcfg, params)
    binding.update({f"gt{i}": g for i, g in enumerate(gt)})
    binding.update(omega=block_diag(omega), xs=np.asarray(features, dtype=np.float64).reshape(slots * n, -1),
                   inv_tau=np.array([[1.0 / tau]]), noise=block_diag([logistic_noise(a) for a in alpha]),
                   fixed_adj=np.zeros((slots * n, slots * n)))
    return prog, binding


def block_diag(mats) -> np.ndarray:
    return scipy.linalg.block_diag(*mats)


def unblock(m, n: int, slots: int) -> np.ndarray:
    return np.stack([m[i * n:(i + 1) * n, i * n:(i + 1) * n] for i in range(slots)])


def real_gradients(graphs, norm_adjs, params, mcfg: ModelConfig) -> list:
    """Gradients of the mean loss on real graphs w.r.t. the model weights."""
    batch = make_batch(graphs, mcfg.pooling, normalized=norm_adjs)
    theta = param_vars(mcfg)
    loss = batch_loss(batch, theta, mcfg)
    return ad.Program(ad.gradient(loss, theta))(bind_params(mcfg, params))


# ---------------------------------------------------------------------------
# initialization

def init_synthetic(ds: GraphDataset, gpc: int, n=None, seed: int = 0) -> SyntheticSet:
    """Copy randomly chosen training graphs of each class into the synthetic slots."""
    if n is None:
        n = average_node_count(ds)
    d = ds.feature_dim
    by_class = ds.class_index_of("train")
    omegas, feats, labels, eps = [], [], [], []
    iu = np.triu_indices(n, 1)
    for c in range(ds.num_classes):
        pool = by_class[c]
        if not pool:
            raise ValueError(f"class {c} has no training graphs")
        rng = np.random.default_rng([seed, _INIT, c])
        picks = rng.choice(pool, size=gpc, replace=len(pool) < gpc)
        class_sig = []
        for idx in picks:
            g = ds.graphs[int(idx)]
            m = min(g.node_count, n)
            om = np.full((n, n), -EDGE_LOGIT)
            om[:m, :m] = np.where(g.adjacency[:m, :m] > 0, EDGE_LOGIT, -EDGE_LOGIT)
            om = np.triu(om, 1)
            x = rng.standard_normal((n, d)) * 1e-2
            x[:m] = g.features[:m]
            omegas.append(om)
            feats.append(x)
            labels.append(c)
            class_sig.append(ad._sigmoid(om[iu]))
        eps.append(float(np.mean(np.concatenate(class_sig))) if n > 1 else 0.0)
    return SyntheticSet(np.stack(omegas), np.stack(feats), np.array(labels, dtype=np.int64),
                        ds.num_classes, epsilon=np.array(eps))


# ---------------------------------------------------------------------------
# one-step condensation

def _theta(mcfg, seed, k):
    return init_params(mcfg, InitDistribution(), np.random.default_rng([seed, _THETA, k]))


def _alpha(seed, k, j, shape):
    return open_uniform(np.random.default_rng([seed, _ALPHA, k, j]), shape)


class _RealSampler:
    def __init__(self, ds: GraphDataset, c: int, batch: int, seed: int):
        self.ds = ds
        self.pool = np.array(ds.class_index_of("train")[c])
        self.size = min(batch, len(self.pool))
        self.rng = np.random.default_rng([seed, _BATCH, c])
        self.norm = {}

    def sample(self):
        idx = self.rng.permutation(self.pool)[:self.size]
        graphs = [self.ds.graphs[i] for i in idx]
        norms = []
        for i, g in zip(idx, graphs):
            if i not in self.norm:
                self.norm[i] = normalize_adjacency(g.adjacency)
            norms.append(self.norm[i])
        return graphs, norms


def _condense_class(args):
    (ds, cfg, syn_omega, syn_x, c, epsilon, n_syn, learn_structure) = args
    mcfg = cfg.model(ds.feature_dim, ds.num_classes)
    slots, n = syn_omega.shape[0], syn_omega.shape[1]
    prog = ClassProgram(mcfg, n, slots, c, beta=cfg.beta, epsilon=epsilon,
                        learn_structure=learn_structure, norm_reg=cfg.pooling == "sum",
                        norm_T=cfg.norm_T, n_syn=n_syn)
    sampler = _RealSampler(ds, c, cfg.batch, cfg.seed)
    schedule = cfg.schedule()
    omega, xs = syn_omega.copy(), syn_x.copy()
    opt_omega = make_optimizer(cfg.optimizer, cfg.lr_omega)
    opt_x = make_optimizer(cfg.optimizer, cfg.lr_feat)
    fixed = block_diag([normalize_adjacency(symmetrize_upper((om > 0).astype(float))) for om in omega])
    n_total = None
    rows = []
    iu = np.triu_indices(n, 1)
    for k in range(cfg.k1):
        tau = anneal_tau(schedule, k)
        params = _theta(mcfg, cfg.seed, k)
        graphs, norms = sampler.sample()
        gt = real_gradients(graphs, norms, params, mcfg)
        binding = bind_params(mcfg, params)
        binding.update({f"gt{i}": g for i, g in enumerate(gt)})
        binding.update(omega=block_diag(omega), xs=xs.reshape(-1, xs.shape[2]),
                       inv_tau=np.array([[1.0 / tau]]), fixed_adj=fixed)
        g_om_total = np.zeros_like(omega)
        g_x_total = np.zeros_like(xs)
        match_sum = reg = 0.0
        for j in range(cfg.k2):
            if n_total is None:
                n_total = (n_syn, n, n)
            alpha = _alpha(cfg.seed, k, j, n_total)[np.asarray(_slots_of(c, slots))]
            binding["noise"] = block_diag([logistic_noise(a) for a in alpha])
            obj, match, reg, _norm, g_om, g_x = prog.run(binding)
            if not math.isfinite(obj):
                raise FloatingPointError(f"non-finite loss at step {k} (class {c})")
            match_sum += match
            g_om_total += unblock(g_om, n, slots)
            g_x_total += g_x.reshape(xs.shape)
        if learn_structure:
            g_om_total = np.triu(g_om_total, 1)
            opt_omega.step([omega], [g_om_total])
        opt_x.step([xs], [g_x_total])
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(xs))):
            raise FloatingPointError(f"non-finite synthetic data after step {k} (class {c})")
        rows.append({"step": k, "class": c, "match_loss": match_sum / cfg.k2, "reg_loss": reg,
                     "tau": tau, "mean_sigma_omega": float(ad._sigmoid(omega[:, iu[0], iu[1]]).mean())})
    return omega, xs, rows


def _slots_of(c, slots):
    # synthetic slots are class-major: class c owns [c*slots, (c+1)*slots)
    return range(c * slots, (c + 1) * slots)


def _run_classes(ds, cfg, syn, learn_structure, jobs):
    gpc = syn.gpc
    eps = syn.epsilon if cfg.epsilon is None else np.full(ds.num_classes, cfg.epsilon)
    tasks = []
    for c in range(ds.num_classes):
        sl = syn.class_slots(c)
        if not np.array_equal(sl, np.arange(c * gpc, (c + 1) * gpc)):
            raise ValueError("synthetic slots must be class-major")
        tasks.append((ds, cfg, syn.omega[sl], syn.features[sl], c, float(eps[c]), len(syn.labels),
                      learn_structure))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_condense_class, tasks))
    else:
        results = [_condense_class(t) for t in tasks]
    out = syn.copy()
    out.log = []
    for c, (om, x, rows) in enumerate(results):
        sl = syn.class_slots(c)
        out.omega[sl] = om
        out.features[sl] = x
        out.log.extend(rows)
    out.log.sort(key=lambda r: (r["step"], r["class"]))
    out.tau = anneal_tau(cfg.schedule(), max(cfg.k1 - 1, 0))
    return out


def condense(ds: GraphDataset, cfg: CondenseConfig, jobs: int = 1, init: SyntheticSet = None) -> SyntheticSet:
    """Run one-step gradient matching for ``cfg.k1`` sampled initializations."""
    syn = init if init is not None else init_synthetic(ds, cfg.gpc, seed=cfg.seed)
    if cfg.k1 == 0:
        return syn.copy()
    t0 = time.perf_counter()
    out = _run_classes(ds, cfg, syn, True, jobs)
    log.info("condensed %d graphs in %.1fs", len(out.labels), time.perf_counter() - t0)
    return out


def condense_features_only(ds: GraphDataset, cfg: CondenseConfig, jobs: int = 1) -> SyntheticSet:
    """Matching with the structure frozen at the initial real graphs (the DCG baseline)."""
    syn = init_synthetic(ds, cfg.gpc, seed=cfg.seed)
    if cfg.k1 == 0:
        return syn.copy()
    return _run_classes(ds, dataclasses.replace(cfg, beta=0.0, pooling=cfg.pooling), syn, False, jobs)


# ---------------------------------------------------------------------------
# bi-level ablation

def _train_theta_on_synthetic(params, mcfg, omega, xs, labels, tau, noise_alpha, lr, steps):
    adjs = [normalize_adjacency(sample_relaxed_adjacency(om, tau, a)) for om, a in zip(omega, noise_alpha)]
    graphs_x = ad.const(xs.reshape(-1, xs.shape[2]))
    n = omega.shape[1]
    batch = Batch(block_diag(adjs), graphs_x, pooling_matrix([n] * len(labels), mcfg.pooling), labels)
    theta = param_vars(mcfg)
    prog = ad.Program(ad.gradient(batch_loss(batch, theta, mcfg), theta))
    params = [p.copy() for p in params]
    for _ in range(steps):
        grads = prog(bind_params(mcfg, params))
        for p, g in zip(params, grads):
            p -= lr * g
    return params


def condense_bilevel(ds: GraphDataset, cfg: CondenseConfig, inner_steps: int, outer_steps: int,
                     lr_model: float = 0.01) -> SyntheticSet:
    """Trajectory gradient matching: match at theta_t, update the set, then train theta.

    ``cfg.k1`` initializations are sampled, each followed for ``outer_steps``
    matching steps with ``inner_steps`` model updates between them.
    """
    if inner_steps < 1 or outer_steps < 1:
        raise ValueError("inner_steps and outer_steps must be >= 1")
    syn = init_synthetic(ds, cfg.gpc, seed=cfg.seed)
    if cfg.k1 == 0:
        return syn.copy()
    mcfg = cfg.model(ds.feature_dim, ds.num_classes)
    gpc, n = syn.gpc, syn.node_count
    eps = syn.epsilon if cfg.epsilon is None else np.full(ds.num_classes, cfg.epsilon)
    progs = [ClassProgram(mcfg, n, gpc, c, beta=cfg.beta, epsilon=float(eps[c]),
                          norm_reg=cfg.pooling == "sum", norm_T=cfg.norm_T, n_syn=len(syn.labels))
             for c in range(ds.num_classes)]
    samplers = [_RealSampler(ds, c, cfg.batch, cfg.seed) for c in range(ds.num_classes)]
    opts = [(make_optimizer(cfg.optimizer, cfg.lr_omega), make_optimizer(cfg.optimizer, cfg.lr_feat))
            for _ in range(ds.num_classes)]
    schedule = cfg.schedule(cfg.k1 * outer_steps)
    out = syn.copy()
    out.log = []
    iu = np.triu_indices(n, 1)
    update = 0
    for k in range(cfg.k1):
        params = _theta(mcfg, cfg.seed, k)
        for t in range(outer_steps):
            tau = anneal_tau(schedule, update)
            alpha = _alpha(cfg.seed, k, t, out.omega.shape)
            for c in range(ds.num_classes):
                sl = out.class_slots(c)
                graphs, norms = samplers[c].sample()
                gt = real_gradients(graphs, norms, params, mcfg)
                binding = bind_params(mcfg, params)
                binding.update({f"gt{i}": g for i, g in enumerate(gt)})
                binding.update(omega=block_diag(out.omega[sl]),
                               xs=out.features[sl].reshape(-1, out.features.shape[2]),
                               inv_tau=np.array([[1.0 / tau]]),
                               noise=block_diag([logistic_noise(a) for a in alpha[sl]]),
                               fixed_adj=np.zeros((gpc * n, gpc * n)))
                obj, match, reg, _norm, g_om, g_x = progs[c].run(binding)
                if not math.isfinite(obj):
                    raise FloatingPointError(f"non-finite loss at update {update} (class {c})")
                om, x = out.omega[sl], out.features[sl]
                opts[c][0].step([om], [np.triu(unblock(g_om, n, gpc), 1)])
                opts[c][1].step([x], [g_x.reshape(x.shape)])
                out.omega[sl], out.features[sl] = om, x
                out.log.append({"step": update, "class": c, "match_loss": match, "reg_loss": reg,
                                "tau": tau,
                                "mean_sigma_omega": float(ad._sigmoid(om[:, iu[0], iu[1]]).mean())})
            params = _train_theta_on_synthetic(params, mcfg, out.omega, out.features, out.labels,
                                               tau, alpha, lr_model, inner_steps)
            update += 1
    out.tau = anneal_tau(schedule, max(update - 1, 0))
    return out
