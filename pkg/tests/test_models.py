import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphcond import autodiff as ad
from graphcond.graphs import Graph, normalize_adjacency, toy_dataset
from graphcond.models import (InitDistribution, ModelConfig, batch_loss, bind_params, fit, forward,
                              init_params, make_batch, param_vars, predict_logits)


def logits_of(graphs, params, cfg):
    batch = make_batch(graphs, cfg.pooling)
    return ad.evaluate(forward(batch, param_vars(cfg), cfg), bind_params(cfg, params))


def loss_of(graphs, params, cfg):
    batch = make_batch(graphs, cfg.pooling)
    return ad.evaluate(batch_loss(batch, param_vars(cfg), cfg), bind_params(cfg, params))[0, 0]


PATH2 = Graph(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([[1.0, 2.0], [0.5, -1.0]]), 1)


def test_init_params_deterministic_and_bounded():
    cfg = ModelConfig("sgc", 1, 3, 3, "mean", 3)
    a, b = init_params(cfg, seed=4), init_params(cfg, seed=4)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert np.all(np.abs(a[0]) <= 1.0)


def test_init_mean_within_three_sigma():
    cfg = ModelConfig("sgc", 1, 100, 100, "mean", 100)
    w = init_params(cfg, seed=0)[0].ravel()[:10_000]
    bound = math.sqrt(6.0 / 200)
    sigma = bound / math.sqrt(3) / math.sqrt(w.size)
    assert abs(w.mean()) < 3 * sigma


def test_init_distribution_validation():
    with pytest.raises(ValueError):
        InitDistribution(scheme="normal")
    with pytest.raises(ValueError):
        ModelConfig(depth=0)


@pytest.mark.parametrize("arch", ["gcn", "sgc"])
def test_zero_weights_give_log_c(arch):
    cfg = ModelConfig(arch, 2, 4, 3, "mean", 2)
    params = [np.zeros(s) for s in cfg.param_shapes()]
    assert loss_of([PATH2, PATH2], params, cfg) == pytest.approx(math.log(3))


def test_single_node_one_layer():
    g = Graph(np.zeros((1, 1)), np.array([[2.0, -1.0]]), 0)
    cfg = ModelConfig("gcn", 1, 3, 2, "sum", 2)
    params = init_params(cfg, seed=1)
    np.testing.assert_allclose(logits_of([g], params, cfg), g.features @ params[0] @ params[1])


def test_gcn_two_node_hand_computation():
    cfg = ModelConfig("gcn", 2, 2, 2, "mean", 2)
    w0 = np.array([[1.0, -1.0], [0.5, 2.0]])
    w1 = np.array([[1.0, 0.0], [-1.0, 1.0]])
    wc = np.array([[2.0, 1.0], [0.0, -1.0]])
    a = np.array([[0.5, 0.5], [0.5, 0.5]])
    h = np.maximum(a @ PATH2.features @ w0, 0)
    expected = (a @ h @ w1).mean(axis=0, keepdims=True) @ wc
    np.testing.assert_allclose(logits_of([PATH2], [w0, w1, wc], cfg), expected, atol=1e-12)


def test_sgc_two_node_k2_hand_computation():
    cfg = ModelConfig("sgc", 2, 3, 2, "sum", 2)
    params = init_params(cfg, seed=3)
    a = normalize_adjacency(PATH2.adjacency)
    expected = (a @ a @ PATH2.features @ params[0]).sum(axis=0, keepdims=True) @ params[1]
    np.testing.assert_allclose(logits_of([PATH2], params, cfg), expected, atol=1e-12)


@given(st.floats(-3, 3), st.integers(0, 100))
@settings(max_examples=20, deadline=None)
def test_sgc_homogeneity(c, seed):
    cfg = ModelConfig("sgc", 2, 3, 2, "mean", 2)
    params = init_params(cfg, seed=seed)
    scaled = Graph(PATH2.adjacency, c * PATH2.features, 1)
    np.testing.assert_allclose(logits_of([scaled], params, cfg), c * logits_of([PATH2], params, cfg),
                               atol=1e-12)


def test_batch_loss_is_mean_of_graph_losses():
    cfg = ModelConfig("gcn", 2, 4, 2, "mean", 2)
    params = init_params(cfg, seed=0)
    g2 = Graph(np.zeros((3, 3)), np.ones((3, 2)), 0)
    single = [loss_of([g], params, cfg) for g in (PATH2, g2)]
    assert loss_of([PATH2], params, cfg) == pytest.approx(single[0])
    assert loss_of([PATH2, g2], params, cfg) == pytest.approx(np.mean(single))


@pytest.mark.parametrize("arch", ["gcn", "sgc"])
@pytest.mark.parametrize("pooling", ["mean", "sum"])
def test_parameter_gradients_match_differences(arch, pooling):
    ds = toy_dataset()
    cfg = ModelConfig(arch, 2, 5, 2, pooling, ds.feature_dim)
    batch = make_batch(ds.graphs[:3], pooling)
    theta = param_vars(cfg)
    loss = batch_loss(batch, theta, cfg)
    b = bind_params(cfg, init_params(cfg, seed=2))
    assert max(ad.finite_diff_check(loss, t, b) for t in theta) < 1e-5


@given(st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_sgc_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    n = 5
    upper = np.triu(rng.random((n, n)) < 0.5, 1).astype(float)
    g = Graph(upper + upper.T, rng.standard_normal((n, 2)), 0)
    perm = rng.permutation(n)
    h = Graph(g.adjacency[np.ix_(perm, perm)], g.features[perm], 0)
    cfg = ModelConfig("sgc", 3, 4, 2, "mean", 2)
    params = init_params(cfg, seed=seed)
    np.testing.assert_allclose(logits_of([g], params, cfg), logits_of([h], params, cfg), atol=1e-12)


def test_sum_pooling_doubles_for_two_disconnected_copies():
    a = PATH2.adjacency
    double = Graph(np.block([[a, np.zeros((2, 2))], [np.zeros((2, 2)), a]]),
                   np.vstack([PATH2.features] * 2), 1)
    cfg = ModelConfig("sgc", 2, 3, 2, "sum", 2)
    params = init_params(cfg, seed=0)
    np.testing.assert_allclose(logits_of([double], params, cfg), 2 * logits_of([PATH2], params, cfg))


def test_fit_is_deterministic_and_rejects_zero_epochs():
    ds = toy_dataset()
    cfg = ModelConfig("gcn", 2, 8, 2, "mean", ds.feature_dim)
    graphs = ds.subset("train")[:6]
    a, b = fit(graphs, cfg, epochs=5, seed=1), fit(graphs, cfg, epochs=5, seed=1)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(predict_logits(graphs, a, cfg), predict_logits(graphs, b, cfg))
    with pytest.raises(ValueError):
        fit(graphs, cfg, epochs=0)
