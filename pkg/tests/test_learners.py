import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stacktier.errors import ConfigError, DataError
from stacktier.learners import (DEFAULTS, FittedModel, LearnerSpec, fit_learner, gini_impurity,
                                logistic_loss, logreg_loss_and_grad, margin, predict_score,
                                sigmoid, staged_margins, xgb_split_gain)


def blobs(n=60, d=3, seed=0, sep=1.0):
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.4).astype(float)
    y[:2] = [0, 1]
    X = rng.normal(size=(n, d)) + sep * y[:, None]
    return X, y


def test_gini_examples():
    assert gini_impurity((5, 5)) == 0.5
    assert gini_impurity((10, 0)) == 0.0
    assert gini_impurity((3, 1)) == pytest.approx(1 - 9 / 16 - 1 / 16)
    with pytest.raises(ValueError):
        gini_impurity((0, 0))


def test_xgb_gain_examples():
    assert xgb_split_gain(0, 1, 0, 1, lam=1.0, gamma=0.7) == -0.7
    assert xgb_split_gain(1, 1, -1, 1, lam=0.0, gamma=0.0) == 1.0
    g = xgb_split_gain(0.3, 2.0, -1.2, 0.5, lam=1.0, gamma=0.1)
    assert g == xgb_split_gain(-1.2, 0.5, 0.3, 2.0, lam=1.0, gamma=0.1)
    with pytest.raises(ValueError):
        xgb_split_gain(1, 0, 1, 1, lam=0.0)


def test_spec_identity_and_validation():
    a = LearnerSpec.create("gbm", learning_rate=0.1, n_rounds=100)
    b = LearnerSpec.create("gbm", n_rounds=100, learning_rate=0.1)
    assert a.spec_id == b.spec_id and a == b
    assert a.params == {**DEFAULTS["gbm"], "learning_rate": 0.1, "n_rounds": 100}
    assert LearnerSpec.create("gbm", learning_rate=0.3).spec_id != a.spec_id
    assert LearnerSpec.from_state(a.to_state()) == a
    for fam, bad in [("gbm", {"learning_rate": 0}), ("random_forest", {"n_trees": 0}),
                     ("linear_svc", {"C": 0}), ("xgb", {"lambda": -1}), ("xgb", {"gamma": -1}),
                     ("tree", {"bogus": 1})]:
        with pytest.raises(ConfigError):
            LearnerSpec.create(fam, **bad)
    with pytest.raises(ConfigError):
        LearnerSpec.create("fcn")


def test_unrestricted_tree_memorizes():
    X, y = blobs(80, sep=0.3)
    m = fit_learner(LearnerSpec.create("tree"), X, y, seed=0)
    assert np.array_equal(predict_score(m, X) >= 0.5, y == 1)


def test_tree_matches_nearest_training_point():
    rng = np.random.default_rng(5)
    for trial in range(10):
        n = int(rng.integers(8, 65))
        X = rng.normal(size=(n, 2))
        y = rng.integers(0, 2, n).astype(float)
        m = fit_learner(LearnerSpec.create("tree"), X, y, seed=trial)
        # exact memorization: every training point is its own 1-NN
        d2 = ((X[:, None] - X[None]) ** 2).sum(-1)
        nn = d2.argmin(axis=1)
        assert np.array_equal(predict_score(m, X), y[nn])


def leaf_index(tree, x):
    node = 0
    while tree["feature"][node] >= 0:
        f = tree["feature"][node]
        node = tree["left"][node] if x[f] <= tree["threshold"][node] else tree["right"][node]
    return node


def test_tree_depth_and_leaf_limits():
    X, y = blobs(100, sep=0.2)
    stump = fit_learner(LearnerSpec.create("tree", max_depth=1), X, y, 0)
    assert stump.trees.feature.size == 3
    big_leaf = fit_learner(LearnerSpec.create("tree", min_samples_leaf=20), X, y, 0)
    tree = big_leaf.trees.tree(0)
    _, counts = np.unique([leaf_index(tree, x) for x in X], return_counts=True)
    assert counts.min() >= 20 and counts.size > 1


def test_single_class_trees_constant_margin_models_error():
    X = np.random.default_rng(0).normal(size=(10, 2))
    y = np.ones(10)
    for fam in ("tree", "random_forest"):
        m = fit_learner(LearnerSpec.create(fam), X, y, 0)
        assert np.all(predict_score(m, X) == 1.0)
    for fam in ("gbm", "xgb", "logreg", "linear_svc"):
        with pytest.raises(DataError):
            fit_learner(LearnerSpec.create(fam), X, y, 0)


def test_gbm_zero_rounds_is_prevalence():
    X, y = blobs(50)
    m = fit_learner(LearnerSpec.create("gbm", n_rounds=0), X, y, 0)
    assert np.allclose(predict_score(m, X), y.mean(), atol=1e-15)


def test_svc_separable_data():
    rng = np.random.default_rng(1)
    w_true = np.array([1.0, -2.0])
    X = rng.uniform(-3, 3, size=(200, 2))
    proj = X @ w_true
    keep = np.abs(proj) >= np.linalg.norm(w_true)   # geometric margin >= 1
    X, y = X[keep], (proj[keep] > 0).astype(float)
    m = fit_learner(LearnerSpec.create("linear_svc", C=100.0, epochs=200), X, y, 0)
    z = margin(m, X)
    # exhaustive threshold search on the learned projection proves it separates
    p = X @ m.coef
    order = np.sort(p)
    cuts = np.r_[order[0] - 1, (order[1:] + order[:-1]) / 2, order[-1] + 1]
    best = max(np.mean((p > c) == (y == 1)) for c in cuts)
    assert best == 1.0
    assert np.mean((z >= 0) == (y == 1)) == 1.0


def test_predict_examples():
    X = np.zeros((3, 2))
    m = FittedModel(LearnerSpec.create("logreg"), 2, 0, coef=np.zeros(2), intercept=0.0)
    assert np.all(predict_score(m, X) == 0.5)
    assert sigmoid(0.847) == pytest.approx(0.6999, abs=1e-4)
    Xb, yb = blobs(40, sep=4.0)
    rf = fit_learner(LearnerSpec.create("random_forest", n_trees=7), Xb, yb, 0)
    s = predict_score(rf, Xb)
    assert np.all(np.isin(s * 7, np.arange(8)))
    far = np.full((1, 3), 50.0)
    assert predict_score(rf, far)[0] == 1.0
    with pytest.raises(DataError, match="expects 3 features"):
        predict_score(rf, np.zeros((2, 4)))


@pytest.mark.parametrize("family", ["tree", "random_forest", "gbm", "xgb", "linear_svc", "logreg"])
def test_scores_bounded_deterministic_serializable(family):
    X, y = blobs(70, d=4, seed=3)
    spec = LearnerSpec.create(family, **({"n_trees": 10} if family == "random_forest" else {}))
    a = fit_learner(spec, X, y, 11)
    b = fit_learner(spec, X, y, 11)
    sa = predict_score(a, X)
    assert np.all((sa >= 0) & (sa <= 1)) and np.all(np.isfinite(sa))
    assert np.array_equal(sa, predict_score(b, X))
    c = FittedModel.from_state(a.to_state())
    assert np.array_equal(predict_score(c, X), sa)
    if a.trees is not None:
        assert np.all(np.isfinite(a.trees.value))


def test_fit_input_errors():
    with pytest.raises(DataError):
        fit_learner(LearnerSpec.create("tree"), np.zeros((0, 2)), np.zeros(0), 0)
    with pytest.raises(DataError):
        fit_learner(LearnerSpec.create("tree"), np.array([[np.nan]]), np.ones(1), 0)


def test_boosting_loss_monotone():
    rng = np.random.default_rng(9)
    for i in range(10):
        X, y = blobs(int(rng.integers(20, 90)), d=3, seed=i, sep=float(rng.uniform(0, 2)))
        for fam, extra in (("gbm", {}), ("xgb", {"lambda": float(rng.choice([0.0, 1.0])),
                                                  "min_child_weight": 0.5})):
            spec = LearnerSpec.create(fam, n_rounds=30, learning_rate=1.0, max_depth=3, **extra)
            m = fit_learner(spec, X, y, i)
            losses = [logistic_loss(mg, y) for mg in staged_margins(m, X)]
            assert np.all(np.diff(losses) <= 1e-12)
            assert np.allclose(losses, m.loss_trace, rtol=0, atol=1e-12)


def test_gbm_margin_ranking():
    X, y = blobs(60)
    m = fit_learner(LearnerSpec.create("gbm", n_rounds=20), X, y, 0)
    z = margin(m, X)
    s = predict_score(m, X)
    assert np.all(np.diff(s[np.argsort(z, kind="stable")]) >= 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_logreg_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(5, 30)), int(rng.integers(1, 6))
    X = rng.normal(size=(n, d))
    y = rng.integers(0, 2, n).astype(float)
    w, b, l2 = rng.normal(size=d), float(rng.normal()), float(rng.uniform(0, 1))
    _, gw, gb = logreg_loss_and_grad(w, b, X, y, l2)
    h = 1e-6
    num = []
    for j in range(d + 1):
        e = np.zeros(d + 1)
        e[j] = h
        lp = logreg_loss_and_grad(w + e[:d], b + e[d], X, y, l2)[0]
        lm = logreg_loss_and_grad(w - e[:d], b - e[d], X, y, l2)[0]
        num.append((lp - lm) / (2 * h))
    num, ana = np.array(num), np.append(gw, gb)
    rel = np.abs(num - ana) / np.maximum(np.abs(ana), 1e-8)
    assert np.all((rel < 1e-5) | (np.abs(num - ana) < 1e-9))


def test_logreg_converges_to_tolerance():
    X, y = blobs(80, d=4, sep=0.8)
    m = fit_learner(LearnerSpec.create("logreg", l2=0.01, tol=1e-8), X, y, 0)
    assert m.converged
    _, gw, gb = logreg_loss_and_grad(m.coef, m.intercept, X, y, 0.01)
    assert max(np.abs(gw).max(), abs(gb)) <= 1e-8


def test_logreg_warns_without_convergence(caplog):
    X, y = blobs(40, d=3, sep=5.0)
    m = fit_learner(LearnerSpec.create("logreg", l2=0.0, tol=1e-14, max_iter=5), X, y, 0)
    assert not m.converged
    assert "max_iter" in caplog.text


def test_random_forest_uses_bootstrap_and_feature_sampling():
    X, y = blobs(60, d=9, sep=0.5)
    spec = LearnerSpec.create("random_forest", n_trees=5, max_depth=2)
    m = fit_learner(spec, X, y, 0)
    roots = [int(m.trees.tree(i)["feature"][0]) for i in range(5)]
    assert len(set(roots)) > 1   # trees differ
    assert math.ceil(math.sqrt(9)) == 3
