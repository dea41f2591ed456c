import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from helpers import brute_mc_auc, pair_auc

from epmd.errors import EmptyInput, OneClassOnly
from epmd.metrics import auroc, doubled_average_ranks, mae, mc_auroc


def test_auroc_examples():
    assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auroc([0.9, 0.1, 0.8, 0.2], [1, 0, 0, 1]) == 0.75
    assert auroc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(OneClassOnly):
        auroc([0.1, 0.2], [1, 1])


def test_doubled_ranks_average_ties():
    assert doubled_average_ranks([3.0, 1.0, 3.0, 2.0]).tolist() == [7, 2, 7, 4]


def test_brute_force_oracles():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        c = int(rng.integers(2, 7))
        labels = rng.integers(0, c, size=n)
        if np.unique(labels).size < 2:
            labels[0], labels[1] = 0, 1
        # coarse scores so that ties are common
        scores = rng.integers(0, 8, size=(n, c)) / 8.0
        assert mc_auroc(scores, labels) == brute_mc_auc(scores.tolist(), labels.tolist())
        binary = (labels == labels[0]).astype(int)
        if 0 < binary.sum() < n:
            assert auroc(scores[:, 0], binary) == pair_auc(scores[:, 0].tolist(), binary.tolist())


def test_mc_auroc_two_classes_reduces_to_auroc():
    rng = np.random.default_rng(1)
    for _ in range(50):
        y = rng.integers(0, 2, size=30)
        y[:2] = [0, 1]
        p1 = rng.random(30)
        scores = np.column_stack([1 - p1, p1])
        assert mc_auroc(scores, y) == pytest.approx(auroc(p1, y), abs=1e-15)


def test_mc_auroc_perfect_and_random():
    y = np.repeat([0, 1, 2], 5)
    assert mc_auroc(np.eye(3)[y], y) == 1.0
    rng = np.random.default_rng(2)
    y = np.repeat([0, 1, 2], 1000)
    assert abs(mc_auroc(rng.random((3000, 3)), y) - 0.5) <= 0.03


def test_mc_auroc_ignores_absent_classes():
    y = np.array([0, 0, 2, 2])
    s = np.array([[0.9, 0.0, 0.1], [0.8, 0.1, 0.1], [0.1, 0.2, 0.7], [0.2, 0.0, 0.8]])
    assert mc_auroc(s, y) == 1.0
    with pytest.raises(OneClassOnly):
        mc_auroc(s[:2], y[:2])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=30, unique=True), st.randoms())
def test_auroc_transform_invariance_and_complement(scores, rnd):
    labels = [rnd.randint(0, 1) for _ in scores]
    labels[0], labels[1] = 0, 1
    a = auroc(scores, labels)
    # exactly order-preserving in floating point: doubling and replacing values by their ranks
    assert auroc([2.0 * x for x in scores], labels) == a
    ranks = {x: k for k, x in enumerate(sorted(scores))}
    assert auroc([ranks[x] for x in scores], labels) == a
    assert auroc(scores, [1 - y for y in labels]) == pytest.approx(1.0 - a, abs=1e-15)


def test_mae_examples():
    assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mae([1, 3], [2, 2]) == 1.0
    with pytest.raises(EmptyInput):
        mae([], [])
    rng = np.random.default_rng(3)
    p, t = rng.normal(size=20), rng.normal(size=20)
    assert abs(mae(p + 0.7, t) - mae(p, t)) <= 0.7 + 1e-12
