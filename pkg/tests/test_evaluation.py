import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphcond.bounds import (BoundCheckConfig, LinearProblem, bound_terms, l2_term, optimum,
                              problems_from_graphs, random_instance, theorem1_check, theorem1_trials,
                              theorem2_terms)
from graphcond.condense import CondenseConfig
from graphcond.evaluation import (CSV_COLUMNS, EvalConfig, roc_auc, run_protocol,
                                  test_metric, train_on_condensed)
from graphcond.graphs import Graph, normalize_adjacency, toy_dataset
from graphcond.models import ModelConfig, batch_loss, bind_params, init_params, make_batch, param_vars
from graphcond import autodiff as ad


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.3], [1, 1, 0]) == 1.0
    assert roc_auc([0.1, 0.2, 0.9], [1, 1, 0]) == 0.0
    assert roc_auc([0.5, 0.5], [1, 0]) == 0.5
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


@pytest.mark.parametrize("n", range(2, 9))
def test_auc_matches_pairwise_exhaustively(n):
    levels = (0.0, 1.0, 2.0) if n <= 6 else (0.0, 1.0)
    for labels in itertools.product((0, 1), repeat=n):
        if 0 < sum(labels) < n:
            for scores in itertools.product(levels, repeat=n):
                assert roc_auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)


@given(st.lists(st.tuples(st.floats(-5, 5), st.integers(0, 1)), min_size=2, max_size=8))
@settings(max_examples=300, deadline=None)
def test_auc_matches_pairwise_on_floats(pairs):
    scores, labels = zip(*pairs)
    if 0 < sum(labels) < len(labels):
        assert roc_auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)


def _separable_pair():
    ds = toy_dataset()
    return ds, [ds.graphs[ds.class_index_of("train")[c][0]] for c in (0, 1)]


def test_train_on_condensed_fits_separable_pair():
    ds, pair = _separable_pair()
    cfg = ModelConfig("gcn", 3, 128, 2, "mean", ds.feature_dim)
    ecfg = EvalConfig()
    params = train_on_condensed(pair, cfg, ecfg, seed=0)
    batch = make_batch(pair, "mean")
    loss = ad.evaluate(batch_loss(batch, param_vars(cfg), cfg), bind_params(cfg, params))[0, 0]
    assert loss < 0.1
    again = train_on_condensed(pair, cfg, ecfg, seed=0)
    for a, b in zip(params, again):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        EvalConfig(epochs=0)


def test_metric_checks():
    ds, pair = _separable_pair()
    cfg = ModelConfig("gcn", 2, 8, 2, "mean", ds.feature_dim)
    params = init_params(cfg, seed=0)
    for metric in ("accuracy", "roc_auc"):
        assert 0 <= test_metric(params, ds.subset("test"), cfg, metric) <= 1
    with pytest.raises(ValueError):
        test_metric(params, [], cfg)
    with pytest.raises(ValueError):
        test_metric(params, pair, ModelConfig("gcn", 2, 8, 3, "mean", ds.feature_dim), "roc_auc")


def test_report_statistics_and_files(tmp_path):
    ds = toy_dataset()
    ccfg = CondenseConfig(k1=3, hidden=8, depth=2, batch=16)
    ecfg = EvalConfig(epochs=20, cseeds=2, tseeds=3)
    report = run_protocol(ds, "random", ccfg, ecfg)
    assert len(report.runs) == 6
    assert [(r["cseed"], r["tseed"]) for r in report.runs] == [(s, t) for s in (0, 1) for t in range(3)]
    scores = [r["score"] for r in report.runs]
    assert report.mean == pytest.approx(sum(scores) / 6)
    assert report.std == pytest.approx(math.sqrt(sum((s - report.mean) ** 2 for s in scores) / 6))
    json_path, csv_path = report.write(tmp_path)
    data = json.loads(json_path.read_text())
    assert data["mean"] == report.mean and len(data["runs"]) == 6
    assert csv_path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)


# ---------------------------------------------------------------------------
# bound diagnostics

def _sgc(d=2, pooling="mean"):
    return ModelConfig("sgc", 2, 4, 2, pooling, d)


def test_bound_terms_examples():
    ds = toy_dataset()
    real = ds.subset("train")
    cfg = _sgc(ds.feature_dim)
    params = init_params(cfg, seed=0)
    l1, l2 = bound_terms(real, [g.adjacency for g in real], [g.features for g in real],
                         [g.label for g in real], params, cfg)
    assert l1 == pytest.approx(0, abs=1e-12) and l2 > 0
    _, l2 = bound_terms(real, [g.adjacency for g in real[:2]], [np.zeros_like(g.features) for g in real[:2]],
                        [0, 1], params, cfg)
    assert l2 == 0
    with pytest.raises(ValueError):
        bound_terms(real, [], [], [], params, ModelConfig("gcn", 2, 4, 2, "mean", ds.feature_dim))


def test_l2_hand_computation():
    # one 2-node graph: A_hat = [[.5,.5],[.5,.5]] keeps the column sums of X
    a = normalize_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]]))
    x = np.array([[1.0, 2.0], [3.0, 0.0]])
    # column sums (4, 2): squared norm 20; mean pooling gamma = 1/2
    expected = 3 / (2 * math.sqrt(4)) * (1 / 2) / 1 * math.sqrt(20 / 2)
    assert l2_term([a], [x], 3, 4, 2, "mean") == pytest.approx(expected, abs=1e-12)
    assert l2_term([a], [x], 3, 4, 2, "sum") == pytest.approx(expected * math.sqrt(2), abs=1e-12)


def test_linear_problem_gradient_matches_differences():
    rng = np.random.default_rng(0)
    p = LinearProblem(rng.standard_normal((6, 3)), np.eye(2)[rng.integers(0, 2, 6)])
    w = rng.standard_normal((3, 2))
    num = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        e = np.zeros_like(w)
        e[idx] = 1e-6
        num[idx] = (p.loss(w + e) - p.loss(w - e)) / 2e-6
    np.testing.assert_allclose(p.grad(w), num, atol=1e-8)


def test_optimum_reports_non_convergence():
    z = np.array([[1.0], [-1.0]])
    with pytest.raises(RuntimeError):
        optimum(LinearProblem(z, np.eye(2)), steps=10)


def test_theorem1_synthetic_equal_real():
    real, _ = random_instance(0)
    cfg = BoundCheckConfig(T=20)
    rp, sp_, rad = problems_from_graphs(real, real, cfg, 2)
    res = theorem1_check(rp, sp_, rad, 2, cfg)
    assert res.gap_sum == pytest.approx(0, abs=1e-12)
    assert res.holds


def test_theorem1_single_step_form():
    real, syn = random_instance(1)
    cfg = BoundCheckConfig(T=1)
    rp, sp_, rad = problems_from_graphs(real, syn, cfg, 2)
    w0 = np.full((rp.Z.shape[1], 2), 0.3)
    res = theorem1_check(rp, sp_, rad, 2, cfg, w0=w0)
    gap0 = np.linalg.norm(rp.grad(w0) - sp_.grad(w0))
    expected = math.sqrt(2) * res.M * gap0 + 1.5 * res.M * (1 / 2) / len(syn) * math.sqrt(rad)
    assert res.rhs == pytest.approx(expected, rel=1e-12)
    assert res.lhs == pytest.approx(rp.loss(w0) - rp.loss(optimum(rp)[0]), abs=1e-9)
    assert res.holds


@pytest.mark.parametrize("pooling", ["mean", "sum"])
def test_theorem1_random_trials(pooling):
    results = theorem1_trials(3, BoundCheckConfig(T=10, pooling=pooling), seed=4)
    assert all(r.holds for r in results)
    assert all(r.M > 0 and r.eta > 0 for r in results)


def test_theorem1_config_validation():
    with pytest.raises(ValueError):
        BoundCheckConfig(T=0)
    with pytest.raises(ValueError):
        BoundCheckConfig(M=-1.0)


def test_theorem2_examples():
    x = np.array([[1.0, 0.0], [2.0, 1.0], [0.0, 3.0]])
    y = np.array([0, 1, 1])
    w = np.zeros((2, 2))
    kw = dict(depth=2, T=4, M=2.0, num_classes=2)
    _, second = theorem2_terms(np.eye(3), x, y, np.eye(3), np.zeros_like(x), y, w, **kw)
    assert second == 0
    l1, second = theorem2_terms(np.eye(3), x, y, np.eye(3), x, y, w, **kw)
    assert l1 == 0
    assert second == pytest.approx(3 * 2 / (2 * 2) * (1 / 2) / 3 * np.linalg.norm(x), abs=1e-12)
    # path 1-2-3, self loops: degrees 2, 3, 2
    a = normalize_adjacency(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float))
    r6 = 1 / math.sqrt(6)
    hand = np.array([[0.5, r6, 0], [r6, 1 / 3, r6], [0, r6, 0.5]])
    np.testing.assert_allclose(a, hand, atol=1e-15)
    _, second = theorem2_terms(a, x, y, a, x, y, w, **kw)
    assert second == pytest.approx(0.25 * np.linalg.norm(hand @ hand @ x), abs=1e-12)
