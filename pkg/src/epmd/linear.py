"""Regularized logistic and ridge regression with k-fold grid search."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import scipy.linalg

from .dataset import TaskSpec
from .errors import (
    DegenerateFoldWarning,
    DimensionMismatch,
    EpmdError,
    OneClassOnly,
    SingleClassWarning,
    SingularSystem,
    TooFewSamples,
    ValidationError,
)
from .metrics import auroc, mae, mc_auroc

LOGISTIC_C = (1.0, 0.1, 0.01, 0.001, 0.0001)
RIDGE_ALPHAS = tuple(10.0**e for e in range(-6, 8))


@dataclass(frozen=True)
class LogisticHyper:
    class_weight: str = "none"
    penalty: str = "l2"
    C: float = 1.0

    def __post_init__(self):
        if self.class_weight not in ("balanced", "none") or self.penalty not in ("l1", "l2") or self.C <= 0:
            raise ValidationError(f"invalid logistic hyperparameters {self}")


@dataclass(frozen=True)
class RidgeHyper:
    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValidationError("ridge alpha must be non-negative")


Hyper = Union[LogisticHyper, RidgeHyper]


def default_grid(task: TaskSpec) -> list[Hyper]:
    if task.kind == "regression":
        return [RidgeHyper(a) for a in RIDGE_ALPHAS]
    return [LogisticHyper(cw, pen, c) for cw in ("balanced", "none") for pen in ("l1", "l2") for c in LOGISTIC_C]


def load_grid(path, task: TaskSpec) -> list[Hyper]:
    """``grid.json``: {"logistic": [{class_weight, penalty, C}, ...], "ridge": [{alpha}, ...]}."""
    obj = json.loads(Path(path).read_text())
    if task.kind == "regression":
        return [RidgeHyper(**h) for h in obj["ridge"]] if "ridge" in obj else default_grid(task)
    return [LogisticHyper(**h) for h in obj["logistic"]] if "logistic" in obj else default_grid(task)


# --------------------------------------------------------------------------
# Logistic regression


@dataclass
class LogisticModel:
    coef: np.ndarray  # (n_models, p); one row for binary, one per class for one-vs-rest
    intercept: np.ndarray
    n_classes: int
    hyper: LogisticHyper
    objective_traces: list[list[float]] = field(default_factory=list, repr=False)

    @property
    def n_features(self) -> int:
        return self.coef.shape[1]


def balanced_weights(y, n_classes: int | None = None) -> np.ndarray:
    """Per-sample weight n / (k * n_c), k = number of classes present in ``y``."""
    y = np.asarray(y).astype(int)
    classes, counts = np.unique(y, return_counts=True)
    per_class = dict(zip(classes.tolist(), (y.size / (classes.size * counts)).tolist()))
    return np.array([per_class[c] for c in y.tolist()])


def _penalty(w, penalty, C):
    if penalty == "l1":
        return float(np.abs(w).sum()) / C
    return float(w @ w) / (2.0 * C)


def _prox(z, step, penalty, C):
    if penalty == "l1":
        thr = step / C
        return np.sign(z) * np.maximum(np.abs(z) - thr, 0.0)
    return z / (1.0 + step / C)


def logistic_nll(w, b, X, y, s) -> float:
    z = X @ w + b
    return float(s @ (np.logaddexp(0.0, z) - y * z))


def logistic_nll_grad(w, b, X, y, s):
    z = X @ w + b
    r = s * (_sigmoid(z) - y)
    return X.T @ r, float(r.sum())


def logistic_objective(w, b, X, y, s, penalty, C) -> float:
    return logistic_nll(w, b, X, y, s) + _penalty(w, penalty, C)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _spectral_norm_sq(X, iters=30) -> float:
    if X.size == 0:
        return 0.0
    v = np.ones(X.shape[1]) / math.sqrt(X.shape[1])
    lam = 0.0
    for _ in range(iters):
        u = X @ v
        v = X.T @ u
        lam = float(np.linalg.norm(v))
        if lam == 0.0:
            return 0.0
        v /= lam
    return lam


def fit_binary_logistic(X, y, s, penalty="l2", C=1.0, tol=1e-8, max_iter=5000):
    """Accelerated proximal gradient with backtracking and function-value restart.

    A momentum step is accepted only if it lowers the objective; otherwise a
    plain proximal step is taken from the current iterate, so the recorded
    objective never increases. Stops when the decrease falls below
    ``tol * max(1, |F|)`` or after ``max_iter`` iterations.
    """
    n, p = X.shape
    w = np.zeros(p)
    b = 0.0
    # Lipschitz bound for the smooth part, including the intercept column
    lip = 0.25 * float(s.max()) * (_spectral_norm_sq(X) + n)
    step = 1.0 / max(lip, 1e-12)

    def prox_step(wy, by, step):
        f_y = logistic_nll(wy, by, X, y, s)
        gw, gb = logistic_nll_grad(wy, by, X, y, s)
        while True:
            w_new = _prox(wy - step * gw, step, penalty, C)
            b_new = by - step * gb
            dw, db = w_new - wy, b_new - by
            f_new = logistic_nll(w_new, b_new, X, y, s)
            if f_new <= f_y + gw @ dw + gb * db + (dw @ dw + db * db) / (2.0 * step) + 1e-12 * abs(f_y):
                return w_new, b_new, f_new + _penalty(w_new, penalty, C), step
            step *= 0.5

    F = logistic_objective(w, b, X, y, s, penalty, C)
    trace = [F]
    wy, by, t_k = w.copy(), b, 1.0
    for _ in range(max_iter):
        w_new, b_new, F_new, step = prox_step(wy, by, step)
        if F_new > F:
            t_k = 1.0
            w_new, b_new, F_new, step = prox_step(w, b, step)
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k)) / 2.0
        beta = (t_k - 1.0) / t_next
        wy = w_new + beta * (w_new - w)
        by = b_new + beta * (b_new - b)
        decrease = F - F_new
        w, b, F, t_k = w_new, b_new, F_new, t_next
        trace.append(F)
        if decrease < tol * max(1.0, abs(F)):
            break
    for before, after in zip(trace, trace[1:]):
        if after > before + 1e-10 * max(1.0, abs(before)):
            raise EpmdError(f"logistic objective increased from {before!r} to {after!r}")
    return w, b, trace


def _constant_logit(y, s) -> float:
    p = float(np.clip((s * y).sum() / s.sum(), 1e-6, 1.0 - 1e-6))
    return math.log(p / (1.0 - p))


def fit_logistic(X, y, hyper: LogisticHyper, n_classes: int = 2, tol=1e-8, max_iter=5000) -> LogisticModel:
    """Binary logistic for ``n_classes == 2``; one-vs-rest otherwise."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    if X.shape[0] != y.size:
        raise DimensionMismatch("X and y row counts differ")
    if not np.isfinite(X).all():
        raise ValidationError("X contains non-finite values")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValidationError(f"labels must lie in 0..{n_classes - 1}")
    s = balanced_weights(y) if hyper.class_weight == "balanced" else np.ones(y.size)
    targets = [y == 1] if n_classes == 2 else [y == c for c in range(n_classes)]
    coefs, intercepts, traces = [], [], []
    for target in targets:
        t = target.astype(float)
        if t.min() == t.max():
            warnings.warn("training labels contain a single class; fitting a constant model", SingleClassWarning, stacklevel=2)
            coefs.append(np.zeros(X.shape[1]))
            intercepts.append(_constant_logit(t, s))
            traces.append([])
            continue
        w, b, trace = fit_binary_logistic(X, t, s, hyper.penalty, hyper.C, tol, max_iter)
        coefs.append(w)
        intercepts.append(b)
        traces.append(trace)
    return LogisticModel(np.array(coefs).reshape(len(targets), X.shape[1]), np.array(intercepts), n_classes, hyper, traces)


def predict_proba(model: LogisticModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[1] != model.n_features:
        raise DimensionMismatch(f"model expects {model.n_features} columns, got {X.shape[1]}")
    p = _sigmoid(X @ model.coef.T + model.intercept)
    if model.n_classes == 2:
        return np.column_stack([1.0 - p[:, 0], p[:, 0]])
    total = p.sum(axis=1, keepdims=True)
    uniform = np.full_like(p, 1.0 / model.n_classes)
    return np.divide(p, total, out=uniform, where=total > 0)


# --------------------------------------------------------------------------
# Ridge regression


@dataclass
class RidgeModel:
    coef: np.ndarray
    intercept: float
    hyper: RidgeHyper

    @property
    def n_features(self) -> int:
        return self.coef.size


def fit_ridge(X, y, alpha: float, fit_intercept: bool = True) -> RidgeModel:
    """Minimize ||y - Xw - b||^2 + alpha ||w||^2 with b unpenalized, via Cholesky."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if alpha < 0:
        raise ValidationError("alpha must be non-negative")
    if X.shape[0] != y.size:
        raise DimensionMismatch("X and y row counts differ")
    n, p = X.shape
    if fit_intercept:
        x_mean, y_mean = X.mean(axis=0), y.mean()
        Xc, yc = X - x_mean, y - y_mean
    else:
        x_mean, y_mean = np.zeros(p), 0.0
        Xc, yc = X, y
    if alpha == 0.0 and np.linalg.matrix_rank(Xc) < p:
        raise SingularSystem("X is rank deficient and alpha = 0")
    try:
        if p <= n or alpha == 0.0:
            gram = Xc.T @ Xc
            gram[np.diag_indices_from(gram)] += alpha
            w = scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), Xc.T @ yc)
        else:
            # dual form, same minimizer for alpha > 0
            kern = Xc @ Xc.T
            kern[np.diag_indices_from(kern)] += alpha
            w = Xc.T @ scipy.linalg.cho_solve(scipy.linalg.cho_factor(kern), yc)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    return RidgeModel(w, float(y_mean - x_mean @ w), RidgeHyper(alpha))


def ridge_objective(w, b, X, y, alpha) -> float:
    r = y - X @ w - b
    return float(r @ r + alpha * (w @ w))


Model = Union[LogisticModel, RidgeModel]


def predict(model: Model, X) -> np.ndarray:
    """Class-probability matrix for logistic models, real values for ridge."""
    if isinstance(model, LogisticModel):
        return predict_proba(model, X)
    X = np.asarray(X, dtype=float)
    if X.shape[1] != model.n_features:
        raise DimensionMismatch(f"model expects {model.n_features} columns, got {X.shape[1]}")
    return X @ model.coef + model.intercept


def fit_model(X, y, task: TaskSpec, hyper: Hyper, tol=1e-8, max_iter=5000) -> Model:
    if task.kind == "regression":
        return fit_ridge(X, y, hyper.alpha)
    return fit_logistic(X, y, hyper, task.num_classes, tol, max_iter)


# --------------------------------------------------------------------------
# Cross-validated selection


def task_score(task: TaskSpec, predictions, y) -> float:
    """Higher is better: AuROC, mc-AuROC, or negative MAE."""
    if task.kind == "regression":
        return -mae(predictions, y)
    try:
        if task.kind == "binary":
            return auroc(predictions[:, 1], y)
        return mc_auroc(predictions, y)
    except OneClassOnly:
        warnings.warn("validation fold holds a single class; scoring it as 0.5", DegenerateFoldWarning, stacklevel=2)
        return 0.5


def kfold_indices(y, k: int, seed: int, stratified: bool) -> list[np.ndarray]:
    """Validation index arrays for k folds (stratified by label when asked)."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(y.size, dtype=int)
    if stratified:
        offset = 0
        for c in np.unique(y):
            idx = rng.permutation(np.flatnonzero(y == c))
            fold_of[idx] = (offset + np.arange(idx.size)) % k
            offset += idx.size
    else:
        fold_of[rng.permutation(y.size)] = np.arange(y.size) % k
    return [np.flatnonzero(fold_of == f) for f in range(k)]


@dataclass
class CVResult:
    best: Hyper
    scores: list[float]
    grid: list[Hyper]


def cv_select(X, y, task: TaskSpec, grid: Sequence[Hyper] | None = None, k: int = 3, seed: int = 0, tol=1e-8) -> CVResult:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    grid = list(grid) if grid is not None else default_grid(task)
    if not grid:
        raise ValidationError("empty hyperparameter grid")
    if y.size < k:
        raise TooFewSamples(f"{y.size} labeled rows cannot be split into {k} folds")
    folds = kfold_indices(y, k, seed, stratified=task.kind != "regression")
    all_rows = np.arange(y.size)
    scores = []
    for hyper in grid:
        fold_scores = []
        for val in folds:
            tr = np.setdiff1d(all_rows, val)
            model = fit_model(X[tr], y[tr], task, hyper, tol)
            fold_scores.append(task_score(task, predict(model, X[val]), y[val]))
        scores.append(float(np.mean(fold_scores)))
    best = int(np.argmax(scores))  # first maximum = grid order tie-break
    return CVResult(grid[best], scores, grid)


# --------------------------------------------------------------------------
# model.json


def model_to_json(model: Model) -> dict:
    if isinstance(model, LogisticModel):
        return {
            "kind": "logistic",
            "hyperparameters": asdict(model.hyper),
            "n_classes": model.n_classes,
            "n_features": model.n_features,
            "coef": model.coef.tolist(),
            "intercept": model.intercept.tolist(),
        }
    return {
        "kind": "ridge",
        "hyperparameters": asdict(model.hyper),
        "n_features": model.n_features,
        "coef": model.coef.tolist(),
        "intercept": model.intercept,
    }


def model_from_json(obj: dict) -> Model:
    if obj["kind"] == "logistic":
        coef = np.array(obj["coef"], dtype=float).reshape(-1, obj["n_features"])
        return LogisticModel(coef, np.array(obj["intercept"], dtype=float), obj["n_classes"], LogisticHyper(**obj["hyperparameters"]))
    if obj["kind"] == "ridge":
        return RidgeModel(np.array(obj["coef"], dtype=float), float(obj["intercept"]), RidgeHyper(**obj["hyperparameters"]))
    raise EpmdError(f"unknown model kind {obj['kind']!r}")


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model)) + "\n")


def load_model(path) -> Model:
    return model_from_json(json.loads(Path(path).read_text()))
