import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from oracles import finite_difference, loss_scalar_branches, relative_errors
from hgoe.detector import (
    LossParams,
    boundary_aware_loss,
    boundary_aware_loss_piecewise,
    compute_tau,
    gradient,
    init_model,
    load_checkpoint,
    mahalanobis_score,
    save_checkpoint,
    score_dataset,
    score_embeddings,
    tau_from_scores,
    total_loss,
    train,
    write_loss_history,
)
from hgoe.embed import EmbeddingConfig, embed_graphs
from hgoe.errors import DimensionError, DomainError, NumericError, TrainingError


def fd_config(seed):
    rng = np.random.default_rng(seed)
    dim, hidden = 8, int(rng.integers(2, 7))
    x_id = rng.normal(size=(int(rng.integers(3, 9)), dim))
    x_oe = rng.normal(1.0, 1.5, size=(int(rng.integers(1, 9)), dim))
    model = init_model(dim, hidden, seed, x_id, depth=1 + seed % 2)
    # move the head off its initial point so the ID term has a nonzero gradient
    model.set_params([p + rng.normal(0, 0.3, p.shape) for p in model.params])
    params = LossParams(l=float(rng.uniform(1.2, 3)), gamma=float(rng.uniform(0, 3)),
                        beta=float(rng.uniform(0.2, 2)), tau_strategy="min")
    tau = compute_tau(model, x_id, "mean")
    return model, x_id, x_oe, params, tau


def test_loss_scalar_examples():
    # hand values were derived with log 2 truncated to 0.6931; within one unit of the 4th decimal
    assert boundary_aware_loss(0.5, math.log(0.2), 2, 2) == pytest.approx(1.5595, abs=1e-4)
    assert boundary_aware_loss(0.1, math.log(0.5), 2, 2) == pytest.approx(2.5022, abs=1e-4)
    assert boundary_aware_loss(0.5, math.log(0.2), 2, 2) == pytest.approx(2.25 * math.log(2), abs=1e-15)
    assert boundary_aware_loss(0.1, math.log(0.5), 2, 2) == pytest.approx(1.9**2 * math.log(2), abs=1e-15)


def test_tau_example_and_strategies():
    raw = np.array([0.0, 1.0, -1.0])
    assert tau_from_scores(raw, "min") == pytest.approx(-1.3133, abs=5e-5)
    assert tau_from_scores(raw, "max") > tau_from_scores(raw, "mean") > tau_from_scores(raw, "min")
    single = np.array([0.7])
    assert tau_from_scores(single, "min") == tau_from_scores(single, "mean") == tau_from_scores(single, "max")
    assert tau_from_scores(raw, "none") == -math.inf


def test_loss_forms_agree_10k():
    rng = np.random.default_rng(0)
    s = rng.uniform(1e-6, 1 - 1e-6, 10_000)
    tau = rng.uniform(-8, 0, 10_000)
    l = rng.uniform(1.0 + 1e-9, 4, 10_000)
    gamma = rng.uniform(0, 4, 10_000)
    a = boundary_aware_loss(s, tau, l, gamma)
    b = boundary_aware_loss_piecewise(s, tau, l, gamma)
    ref = np.array([loss_scalar_branches(*t) for t in zip(s, tau, l, gamma)])
    assert np.max(np.abs(a - b)) < 1e-12
    assert np.max(np.abs(a - ref)) < 1e-12


def test_gamma_zero_ignores_l():
    for s, tau in [(0.3, -2.0), (0.3, -0.5), (0.9, -3.0)]:
        expected = -max(math.log(s), tau)
        for l in (1.5, 2.0, 7.0):
            assert boundary_aware_loss(s, tau, l, 0) == pytest.approx(expected, abs=1e-15)


def test_loss_domain_errors():
    for bad in (0.0, 1.0, -0.1, 1.5, float("nan")):
        with pytest.raises(DomainError):
            boundary_aware_loss(bad, -1.0)


def test_loss_continuous_at_branch_point():
    tau = -0.9
    b = math.exp(tau)
    for eps in (1e-4, 1e-6, 1e-8):
        gap = abs(boundary_aware_loss(b + eps, tau) - boundary_aware_loss(b - eps, tau))
        assert gap < 100 * eps


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, -0.01), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_loss_decreasing_above_threshold_gamma0(tau, s1, s2):
    lo, hi = sorted((s1, s2))
    if hi - lo < 1e-9 or math.log(lo) <= tau:
        return
    assert boundary_aware_loss(hi, tau, 2, 0) < boundary_aware_loss(lo, tau, 2, 0)


def test_total_loss_examples(rng):
    x = rng.normal(size=(6, 4))
    model = init_model(4, 3, 0, x)
    params = LossParams(beta=0.0)
    id_sum = float(model.score(x).sum())
    assert total_loss(model, x, rng.normal(size=(5, 4)), params, -1.0) == id_sum
    assert total_loss(model, x, np.zeros((0, 4)), LossParams(), -1.0) == id_sum


def test_total_loss_hand_sum():
    # ID scores {1, 2}; one OE sample with s=0.5 (raw 0) and tau=log 0.2
    class Fixed:
        def score(self, x):
            return np.asarray(x, dtype=float)[:, 0]

    out = total_loss(Fixed(), np.array([[1.0], [2.0]]), np.array([[0.0]]), LossParams(), math.log(0.2))
    assert out == pytest.approx(4.5595, abs=1e-4)
    assert out == pytest.approx(3 + 2.25 * math.log(2), abs=1e-14)


def test_gradient_matches_finite_differences():
    worst = 0.0
    for seed in range(20):
        model, x_id, x_oe, params, tau = fd_config(seed)

        def fn(ps):
            m = model.copy()
            m.set_params(ps)
            return total_loss(m, x_id, x_oe, params, tau)

        analytic = gradient(model, x_id, x_oe, params, tau)
        numeric = finite_difference(fn, model.params, 1e-5)
        worst = max(worst, relative_errors(analytic, numeric).max())
    assert worst < 1e-4


def test_gradient_vanishes_at_center(rng):
    x = rng.normal(size=(5, 4))
    model = init_model(4, 3, 0, x)
    model.center = model.hidden(x[:1])[0]
    grads = gradient(model, x[:1], np.zeros((0, 4)), LossParams(beta=0.0), -1.0)
    for g in grads:
        np.testing.assert_allclose(g, 0.0, atol=1e-12)


def test_gradient_linear_in_beta():
    model, x_id, x_oe, params, tau = fd_config(3)
    base = gradient(model, x_id, x_oe, LossParams(params.l, params.gamma, 0.0), tau)
    one = gradient(model, x_id, x_oe, LossParams(params.l, params.gamma, 1.0), tau)
    two = gradient(model, x_id, x_oe, LossParams(params.l, params.gamma, 2.0), tau)
    for g0, g1, g2 in zip(base, one, two):
        np.testing.assert_allclose(g2 - g0, 2 * (g1 - g0), rtol=1e-10, atol=1e-12)


def test_init_model_properties(rng):
    x = rng.normal(size=(12, 5))
    a, b = init_model(5, 4, 7, x), init_model(5, 4, 7, x)
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)
    assert np.all(a.score(rng.normal(size=(50, 5))) >= 0)
    with pytest.raises(ValueError):
        init_model(5, 4, 0, np.zeros((0, 5)))


def test_zero_distance_scores_half(rng):
    x = rng.normal(size=(4, 3))
    model = init_model(3, 2, 0, x)
    model.center = model.hidden(x[:1])[0]
    rec = score_embeddings(model, x[:1])[0]
    assert rec.raw == 0.0 and rec.normalized == 0.5


def test_tau_min_bounds_id(rng):
    x = rng.normal(size=(20, 4))
    model = init_model(4, 3, 1, x)
    tau = compute_tau(model, x, "min")
    logs = -np.logaddexp(0, -model.score(x))
    assert tau <= 0 and np.all(logs >= tau)


def toy_problem(seed):
    rng = np.random.default_rng(seed)
    x_id = rng.normal(0, 0.3, size=(80, 6))
    x_oe = rng.normal(0, 0.3, size=(40, 6)) + 2.0
    return x_id, x_oe


def test_lr_zero_leaves_parameters():
    x_id, x_oe = toy_problem(0)
    model = init_model(6, 4, 0, x_id)
    trained, state = train(model, x_id, x_oe, LossParams(), epochs=5, lr=0.0, seed=0)
    for p, q in zip(model.params, trained.params):
        np.testing.assert_array_equal(p, q)
    assert len(state.loss_history) == 5


def test_beta_zero_equals_empty_oe():
    x_id, x_oe = toy_problem(1)
    model = init_model(6, 4, 0, x_id)
    a, sa = train(model, x_id, x_oe, LossParams(beta=0.0), epochs=5, seed=3)
    b, sb = train(model, x_id, np.zeros((0, 6)), LossParams(beta=0.0), epochs=5, seed=3)
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)
    assert sa.loss_history == sb.loss_history


@pytest.mark.parametrize("seed", range(5))
def test_toy_training_reduces_loss(seed):
    x_id, x_oe = toy_problem(seed)
    model = init_model(6, 4, seed, x_id)
    _, state = train(model, x_id, x_oe, LossParams(), epochs=30, lr=1e-2, batch_size=16, seed=seed)
    assert state.loss_history[-1] <= state.loss_history[0]
    assert all(math.isfinite(v) for v in state.loss_history)
    assert state.tau_current <= 0


def test_training_reproducible_and_history(tmp_path):
    x_id, x_oe = toy_problem(2)
    model = init_model(6, 4, 0, x_id, depth=2)
    a, sa = train(model, x_id, x_oe, LossParams(), epochs=4, seed=1)
    b, sb = train(model, x_id, x_oe, LossParams(), epochs=4, seed=1)
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)
    path = tmp_path / "loss.csv"
    write_loss_history(sa, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,total,id_term,oe_term,tau" and len(lines) == 5


def test_training_diverges_with_diagnostic():
    x_id, x_oe = toy_problem(0)
    model = init_model(6, 4, 0, x_id * 1e3)
    with pytest.raises(TrainingError, match="epoch"):
        train(model, x_id * 1e150, x_oe, LossParams(), epochs=3, lr=1e6)


def test_checkpoint_round_trip(tmp_path, rng):
    x = rng.normal(size=(10, 5))
    model = init_model(5, 3, 2, x, EmbeddingConfig(d_s=2, wl_iterations=1, wl_dim=0), depth=2)
    path = tmp_path / "ckpt.json"
    save_checkpoint(model, path, LossParams(gamma=1.5))
    back, params = load_checkpoint(path)
    np.testing.assert_array_equal(back.score(x), model.score(x))
    assert params == LossParams(gamma=1.5)
    assert back.embedding_config == model.embedding_config


def test_score_dataset_order_and_guard(small_dataset, rng):
    cfg = EmbeddingConfig(d_s=4, wl_iterations=2, wl_dim=8, feature_dim=1)
    emb = embed_graphs(small_dataset.graphs, cfg)
    model = init_model(cfg.dim, 3, 0, emb, cfg)
    recs = score_dataset(model, small_dataset.graphs)
    assert [r.graph_id for r in recs] == [g.graph_id for g in small_dataset]
    for r in recs:
        assert 0 < r.normalized < 1 and r.normalized == pytest.approx(1 / (1 + math.exp(-r.raw)))
    order = np.argsort([r.raw for r in recs])
    assert np.all(np.diff([recs[i].normalized for i in order]) >= 0)
    other = [random_graph(rng, 5, 0.5, "x", 0, feature_dim=9)]
    with pytest.raises(DimensionError):
        score_dataset(model, other)


def test_mahalanobis_cases(rng):
    x = rng.normal(size=(500, 3))
    # whiten to an exact identity sample covariance
    x = x - x.mean(axis=0)
    chol = np.linalg.cholesky(np.cov(x, rowvar=False))
    x = np.linalg.solve(chol, x.T).T
    mu = x.mean(axis=0)
    q = rng.normal(size=(50, 3)) * 3
    got = mahalanobis_score(x, q, ridge=0.0)
    np.testing.assert_allclose(got, ((q - mu) ** 2).sum(axis=1), atol=1e-9)
    assert mahalanobis_score(x, mu, ridge=0.0)[0] == pytest.approx(0.0, abs=1e-20)
    assert np.all(mahalanobis_score(x, rng.normal(size=(100, 3)) * 10) >= 0)


def test_mahalanobis_singular():
    x = np.zeros((5, 2))
    with pytest.raises(NumericError):
        mahalanobis_score(x, x, ridge=0.0)
