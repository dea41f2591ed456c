import json
import warnings

import numpy as np
import pytest

from epmd.dataset import TASKS
from epmd.errors import DimensionMismatch, SingleClassWarning, SingularSystem, TooFewSamples
from epmd.linear import (
    LOGISTIC_C,
    RIDGE_ALPHAS,
    LogisticHyper,
    LogisticModel,
    RidgeHyper,
    balanced_weights,
    cv_select,
    default_grid,
    fit_binary_logistic,
    fit_logistic,
    fit_ridge,
    kfold_indices,
    load_grid,
    load_model,
    logistic_nll,
    logistic_nll_grad,
    logistic_objective,
    predict,
    predict_proba,
    ridge_objective,
    save_model,
)
from epmd.metrics import auroc, mae

MORT, LOS, DD = TASKS["mort"], TASKS["los"], TASKS["dd"]


def gd_ridge(X, y, alpha, iters=200_000):
    """Plain gradient descent on ||y - Xw - b||^2 + alpha ||w||^2."""
    n, p = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    L = 2 * (np.linalg.norm(A, 2) ** 2 + alpha)
    theta = np.zeros(p + 1)
    for _ in range(iters):
        r = A @ theta - y
        g = 2 * A.T @ r
        g[:p] += 2 * alpha * theta[:p]
        theta -= g / L
        if np.linalg.norm(g) < 1e-11:
            break
    return theta[:p], theta[p]


def test_default_grids():
    grid = default_grid(MORT)
    assert len(grid) == 20 and {h.C for h in grid} == set(LOGISTIC_C)
    assert [h.alpha for h in default_grid(LOS)] == [10.0**e for e in range(-6, 8)] == list(RIDGE_ALPHAS)


def test_grid_file(tmp_path):
    p = tmp_path / "grid.json"
    p.write_text(json.dumps({"ridge": [{"alpha": 3.0}]}))
    assert load_grid(p, LOS) == [RidgeHyper(3.0)]
    assert load_grid(p, MORT) == default_grid(MORT)


def test_ridge_hand_example():
    m = fit_ridge([[1.0], [2.0]], [1.0, 2.0], 1.0, fit_intercept=False)
    assert m.coef[0] == pytest.approx(5 / 6, abs=1e-15)


def test_ridge_interpolates_without_penalty():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(4, 4))
    y = rng.normal(size=4)
    m = fit_ridge(X, y, 0.0, fit_intercept=False)
    assert mae(predict(m, X), y) < 1e-10


def test_ridge_large_penalty_predicts_mean():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(30, 3)), rng.normal(size=30)
    m = fit_ridge(X, y, 1e7)
    np.testing.assert_allclose(predict(m, X), y.mean(), atol=1e-3)


def test_ridge_singular():
    X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(SingularSystem):
        fit_ridge(X, [1.0, 2.0, 3.0], 0.0)


@pytest.mark.parametrize("n,p,alpha", [(30, 5, 0.5), (8, 20, 5.0), (15, 15, 1.0)])
def test_ridge_matches_gradient_descent(n, p, alpha):
    rng = np.random.default_rng(n + p)
    X, y = rng.normal(size=(n, p)), rng.normal(size=n)
    m = fit_ridge(X, y, alpha)
    w, b = gd_ridge(X, y, alpha)
    np.testing.assert_allclose(m.coef, w, atol=1e-6)
    assert m.intercept == pytest.approx(b, abs=1e-6)
    assert ridge_objective(m.coef, m.intercept, X, y, alpha) <= ridge_objective(w, b, X, y, alpha) + 1e-9


def test_balanced_weights_example():
    assert balanced_weights([1, 1, 1, 0]).tolist() == pytest.approx([2 / 3, 2 / 3, 2 / 3, 2.0])


def test_zero_weights_give_half():
    m = LogisticModel(np.zeros((1, 3)), np.zeros(1), 2, LogisticHyper())
    np.testing.assert_array_equal(predict_proba(m, np.random.default_rng(0).normal(size=(5, 3))), 0.5)


def test_logistic_gradient_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n, p = 25, 6
        X = rng.normal(size=(n, p))
        y = (rng.random(n) < 0.4).astype(float)
        s = rng.uniform(0.5, 2.0, size=n)
        w, b = rng.normal(size=p), float(rng.normal())
        gw, gb = logistic_nll_grad(w, b, X, y, s)
        h = 1e-5
        num = np.zeros(p)
        for j in range(p):
            e = np.zeros(p)
            e[j] = h
            num[j] = (logistic_nll(w + e, b, X, y, s) - logistic_nll(w - e, b, X, y, s)) / (2 * h)
        num_b = (logistic_nll(w, b + h, X, y, s) - logistic_nll(w, b - h, X, y, s)) / (2 * h)
        a, f = np.append(gw, gb), np.append(num, num_b)
        assert np.linalg.norm(a - f) / np.linalg.norm(f) < 1e-4


@pytest.mark.parametrize("penalty", ["l1", "l2"])
def test_logistic_objective_monotone(penalty):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 10))
    y = (X[:, 0] + 0.5 * rng.normal(size=60) > 0).astype(float)
    for C in (10.0, 1.0, 0.05):
        _, _, trace = fit_binary_logistic(X, y, np.ones(60), penalty, C)
        assert all(b <= a for a, b in zip(trace, trace[1:]))
        assert len(trace) > 2


def test_logistic_reaches_optimum():
    from scipy.optimize import minimize

    rng = np.random.default_rng(4)
    X = rng.normal(size=(80, 4))
    y = (X @ [1.0, -1.0, 0.5, 0.0] + rng.normal(size=80) > 0).astype(float)
    s = np.ones(80)
    w, b, _ = fit_binary_logistic(X, y, s, "l2", 1.0)

    def f(t):
        return logistic_objective(t[:4], t[4], X, y, s, "l2", 1.0)

    def g(t):
        gw, gb = logistic_nll_grad(t[:4], t[4], X, y, s)
        return np.append(gw + t[:4], gb)

    ref = minimize(f, np.zeros(5), jac=g, method="BFGS", options={"gtol": 1e-10})
    assert f(np.append(w, b)) == pytest.approx(ref.fun, rel=1e-6)
    np.testing.assert_allclose(np.append(w, b), ref.x, atol=1e-3)


def test_l1_zeroes_noise_features():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 12))
    y = (2 * X[:, 0] + rng.normal(size=200) > 0).astype(int)
    m = fit_logistic(X, y, LogisticHyper("none", "l1", 0.02))
    assert m.coef[0, 0] != 0.0
    assert np.all(m.coef[0, 1:] == 0.0)


def test_separable_training_auroc():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 2))
    y = (X[:, 0] > 0).astype(int)
    m = fit_logistic(X, y, LogisticHyper("none", "l2", 100.0))
    assert auroc(predict(m, X)[:, 1], y) == 1.0


def test_multiclass_probabilities():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(60, 3))
    y = np.argmax(X @ rng.normal(size=(3, 6)), axis=1)
    y[:6] = np.arange(6)
    m = fit_logistic(X, y, LogisticHyper(), n_classes=6)
    P = predict(m, X)
    assert P.shape == (60, 6)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    with pytest.raises(DimensionMismatch):
        predict(m, X[:, :2])


def test_single_class_gives_constant_model():
    X = np.random.default_rng(8).normal(size=(5, 2))
    with pytest.warns(SingleClassWarning):
        m = fit_logistic(X, np.ones(5, dtype=int), LogisticHyper())
    P = predict(m, X)
    assert np.all(P[:, 1] == P[0, 1]) and P[0, 1] > 0.99


def test_weight_penalty_tradeoff():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(50, 5))
    y = (X[:, 1] + rng.normal(size=50) > 0).astype(float)
    s = rng.uniform(0.5, 1.5, size=50)
    test = rng.normal(size=(30, 5))
    w1, b1, _ = fit_binary_logistic(X, y, s, "l2", 0.5)
    w2, b2, _ = fit_binary_logistic(X, y, 3.0 * s, "l2", 0.5 / 3.0)
    assert np.array_equal(np.argsort(test @ w1 + b1), np.argsort(test @ w2 + b2))
    assert logistic_objective(w2, b2, X, y, 3 * s, "l2", 0.5 / 3) == pytest.approx(
        3 * logistic_objective(w1, b1, X, y, s, "l2", 0.5), rel=1e-6)


def test_cv_single_combination_and_sample_floor():
    rng = np.random.default_rng(10)
    X, y = rng.normal(size=(12, 2)), np.array([0, 1] * 6)
    grid = [LogisticHyper("balanced", "l2", 0.1)]
    assert cv_select(X, y, MORT, grid).best == grid[0]
    assert cv_select(X[:3], np.array([0.0, 1.0, 2.0]), LOS, [RidgeHyper(1.0)]).best == RidgeHyper(1.0)
    with pytest.raises(TooFewSamples):
        cv_select(X[:2], np.array([0.0, 1.0]), LOS, [RidgeHyper(1.0)])


def test_cv_ties_go_to_first_entry():
    X = np.zeros((9, 1))
    y = np.arange(9, dtype=float)
    grid = [RidgeHyper(5.0), RidgeHyper(1.0)]  # no signal: every alpha predicts the fold mean
    assert cv_select(X, y, LOS, grid).best == RidgeHyper(5.0)


def test_folds_stratified_and_deterministic():
    y = np.array([0] * 9 + [1] * 6)
    a, b = kfold_indices(y, 3, 4, True), kfold_indices(y, 3, 4, True)
    assert all(np.array_equal(x, z) for x, z in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(15))
    assert [int(y[f].sum()) for f in a] == [2, 2, 2]


def test_l1_selected_on_sparse_data():
    grid = [LogisticHyper("none", pen, c) for pen in ("l1", "l2") for c in (1.0, 0.1, 0.01)]
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        X = rng.normal(size=(90, 40))
        logit = 3.0 * X[:, 0] - 3.0 * X[:, 1]
        y = (rng.random(90) < 1 / (1 + np.exp(-logit))).astype(int)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            wins += cv_select(X, y, MORT, grid, seed=seed).best.penalty == "l1"
    assert wins >= 15


def test_model_json_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    X = rng.normal(size=(30, 3))
    y = rng.integers(0, 3, size=30)
    for m in (fit_logistic(X, y, LogisticHyper("balanced", "l1", 0.5), n_classes=3), fit_ridge(X, y * 1.0, 2.0)):
        save_model(m, tmp_path / "model.json")
        again = load_model(tmp_path / "model.json")
        np.testing.assert_array_equal(predict(again, X), predict(m, X))
