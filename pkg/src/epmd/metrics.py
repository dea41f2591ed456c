"""AuROC (rank statistic), Hand & Till multiclass AuROC, and MAE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyInput, OneClassOnly


@dataclass(frozen=True)
class MetricResult:
    name: str
    value: float
    n: int


def doubled_average_ranks(x) -> np.ndarray:
    """Twice the 1-based average ranks, as exact integers."""
    x = np.asarray(x)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks2 = np.empty(x.size, dtype=np.int64)
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [x.size])) - 1
    for s, e in zip(starts, ends):
        ranks2[order[s : e + 1]] = s + e + 2
    return ranks2


def auroc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos * n_neg) with average ranks for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise DimensionMismatch("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AuROC needs both classes")
    r2 = doubled_average_ranks(scores)
    u2 = int(r2[pos].sum()) - n_pos * (n_pos + 1)
    return u2 / (2 * n_pos * n_neg)


def mc_auroc(score_matrix, labels) -> float:
    """Hand & Till (2001) M: mean over class pairs of (A(i|j) + A(j|i)) / 2.

    A(i|j) ranks the class-i column on samples of classes i and j. Classes
    absent from ``labels`` are left out of the average.
    """
    scores = np.asarray(score_matrix, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.ndim != 2 or scores.shape[0] != labels.size:
        raise DimensionMismatch("score matrix must be n_samples x n_classes")
    present = np.unique(labels)
    c = present.size
    if c < 2:
        raise OneClassOnly("mc-AuROC needs at least two classes")
    total = 0.0
    for a in range(c):
        for b in range(a + 1, c):
            i, j = present[a], present[b]
            sel = (labels == i) | (labels == j)
            a_ij = auroc(scores[sel, i], labels[sel] == i)
            a_ji = auroc(scores[sel, j], labels[sel] == j)
            total += (a_ij + a_ji) / 2.0
    return 2.0 * total / (c * (c - 1))


def mae(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise DimensionMismatch("predictions and targets differ in length")
    if p.size == 0:
        raise EmptyInput("MAE of an empty set")
    return float(np.mean(np.abs(p - t)))
