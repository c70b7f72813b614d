"""Train-on-condensed / test-on-real evaluation and seed-repetition reports."""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .graphs import GraphDataset
from .models import ModelConfig, fit, predict_logits

METRICS = ("accuracy", "roc_auc")
CSV_COLUMNS = ("method", "dataset", "gpc", "cseed", "tseed", "score", "cond_seconds", "eval_seconds")


@dataclass
class EvalConfig:
    epochs: int = 500
    lr: float = 0.001
    optimizer: str = "adam"
    metric: str = "accuracy"
    cseeds: int = 5
    tseeds: int = 10
    discretization: str = "threshold"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.cseeds < 1 or self.tseeds < 1:
            raise ValueError("seed counts must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass
class EvalReport:
    method: str
    dataset: str
    gpc: int
    runs: list = field(default_factory=list)

    @property
    def scores(self) -> np.ndarray:
        return np.array([r["score"] for r in self.runs])

    @property
    def mean(self) -> float:
        return float(self.scores.mean())

    @property
    def std(self) -> float:
        return float(self.scores.std())

    def to_dict(self) -> dict:
        return {"method": self.method, "dataset": self.dataset, "gpc": self.gpc,
                "mean": self.mean, "std": self.std, "runs": self.runs}

    def write(self, directory) -> tuple:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        json_path, csv_path = directory / "report.json", directory / "report.csv"
        json_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for r in self.runs:
                writer.writerow({k: r[k] for k in CSV_COLUMNS})
        return json_path, csv_path


def roc_auc(scores, labels) -> float:
    """Mann-Whitney statistic with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def softmax_rows(z) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def test_metric(params, graphs, cfg: ModelConfig, metric: str = "accuracy") -> float:
    graphs = list(graphs)
    if not graphs:
        raise ValueError("empty test split")
    labels = np.array([g.label for g in graphs])
    logits = predict_logits(graphs, params, cfg)
    if metric == "accuracy":
        return float(np.mean(np.argmax(logits, axis=1) == labels))
    if metric == "roc_auc":
        if cfg.num_classes != 2:
            raise ValueError("roc_auc requires exactly two classes")
        return roc_auc(softmax_rows(logits)[:, 1], labels)
    raise ValueError(f"unknown metric {metric!r}")


test_metric.__test__ = False  # keep pytest from collecting this


def train_on_condensed(graphs, cfg: ModelConfig, ecfg: EvalConfig, seed) -> list:
    """Adam training on the (discretized) condensed graphs."""
    return fit(graphs, cfg, epochs=ecfg.epochs, lr=ecfg.lr, seed=seed, optimizer=ecfg.optimizer)


def train_seed(cseed: int, tseed: int) -> np.random.Generator:
    return np.random.default_rng([cseed, tseed])


def _eval_job(args):
    graphs, test_graphs, mcfg, ecfg, cseed, tseed = args
    t0 = time.perf_counter()
    params = train_on_condensed(graphs, mcfg, ecfg, train_seed(cseed, tseed))
    score = test_metric(params, test_graphs, mcfg, ecfg.metric)
    return score, time.perf_counter() - t0


def _cond_job(args):
    from .baselines import condensed_graphs

    ds, method, ccfg, ecfg, pretrain_epochs = args
    t0 = time.perf_counter()
    graphs = condensed_graphs(ds, method, ccfg, discretization=ecfg.discretization,
                              pretrain_epochs=pretrain_epochs)
    return graphs, time.perf_counter() - t0


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def evaluate_graphs(graphs, ds: GraphDataset, mcfg: ModelConfig, ecfg: EvalConfig, *, method: str,
                    cseed: int = 0, cond_seconds: float = 0.0, jobs: int = 1) -> EvalReport:
    """Evaluate one fixed condensed set over ``ecfg.tseeds`` training seeds."""
    test = ds.subset("test")
    results = _map(_eval_job, [(graphs, test, mcfg, ecfg, cseed, t) for t in range(ecfg.tseeds)], jobs)
    report = EvalReport(method, ds.name, len(graphs) // ds.num_classes)
    for t, (score, secs) in enumerate(results):
        report.runs.append(_row(report, cseed, t, score, cond_seconds, secs))
    return report


def _row(report, cseed, tseed, score, cond_seconds, eval_seconds):
    return {"method": report.method, "dataset": report.dataset, "gpc": report.gpc, "cseed": cseed,
            "tseed": tseed, "score": score, "cond_seconds": cond_seconds, "eval_seconds": eval_seconds}


def run_protocol(ds: GraphDataset, method: str, ccfg, ecfg: EvalConfig, jobs: int = 1,
                 pretrain_epochs: int = 500) -> EvalReport:
    """Condense with ``ecfg.cseeds`` seeds, then train/test ``ecfg.tseeds`` models per set.

    Condensation seeds are ``ccfg.seed + i``.  Rows are ordered by (cseed, tseed)
    regardless of how jobs were scheduled.
    """
    mcfg = ccfg.model(ds.feature_dim, ds.num_classes)
    cseeds = [ccfg.seed + i for i in range(ecfg.cseeds)]
    conds = _map(_cond_job, [(ds, method, dataclasses.replace(ccfg, seed=s), ecfg, pretrain_epochs)
                             for s in cseeds], jobs)
    test = ds.subset("test")
    tasks = [(graphs, test, mcfg, ecfg, s, t)
             for s, (graphs, _) in zip(cseeds, conds) for t in range(ecfg.tseeds)]
    results = _map(_eval_job, tasks, jobs)
    report = EvalReport(method, ds.name, ccfg.gpc)
    for (graphs, _test, _m, _e, s, t), (score, secs) in zip(tasks, results):
        cond_secs = conds[cseeds.index(s)][1]
        report.runs.append(_row(report, s, t, score, cond_secs, secs))
    return report
