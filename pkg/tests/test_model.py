import warnings

import numpy as np
import pytest
from helpers import gradient_relative_error, random_instance, summed_node_loss

from epmd.errors import DimensionMismatch, EmptyGraph, NoNeighbors, SkippedNodesWarning
from epmd.featurize import FeatureVectorWithMask, featurize_dataset
from epmd.graph import AffinityGraph, graph_from_dataset
from epmd.model import (
    Adam,
    EncoderParams,
    TrainConfig,
    TypeInputs,
    batch_loss_and_grads,
    encode_all,
    encode_node,
    encode_type,
    identity_inputs,
    init_params,
    loss_gradients,
    margin_loss,
    neighbor_mean_operator,
    reconstruct,
    train,
)
from epmd.representations import encoder_inputs
from epmd.skipgram import SkipgramConfig
from epmd.synthetic import SyntheticConfig, generate_with_clusters


def make_params(rng, p=3, n=4, d=2):
    return EncoderParams(["t"], [rng.normal(size=(p, d))], [rng.normal(size=(n, d))])


def test_encode_type_branches():
    rng = np.random.default_rng(0)
    params = make_params(rng)
    x = np.array([1.0, -2.0, 0.5])
    full = encode_type(params, 0, 1, FeatureVectorWithMask(x, [True] * 3))
    np.testing.assert_array_equal(full, x @ params.w1[0])
    empty = encode_type(params, 0, 1, FeatureVectorWithMask(np.zeros(3), [False] * 3))
    np.testing.assert_array_equal(empty, params.w2[0][1])
    half = encode_type(params, 0, 1, FeatureVectorWithMask(x, [True, False, True]))
    x1 = np.array([1.0, 0.0, 0.5])
    np.testing.assert_allclose(half, x1 @ params.w1[0] + params.w2[0][1], rtol=0, atol=1e-15)
    with pytest.raises(DimensionMismatch):
        encode_type(params, 0, 1, FeatureVectorWithMask(np.zeros(2), [True, True]))


def test_encode_type_is_linear_in_x1():
    rng = np.random.default_rng(1)
    params = make_params(rng)
    x = rng.normal(size=3)
    mask = [True, False, True]
    w2_row = params.w2[0][2]
    base = encode_type(params, 0, 2, FeatureVectorWithMask(x, mask)) - w2_row
    scaled = encode_type(params, 0, 2, FeatureVectorWithMask(2.5 * x, mask)) - w2_row
    np.testing.assert_allclose(scaled, 2.5 * base, rtol=1e-13)


def test_bow_input_is_normalized_by_token_count():
    rng = np.random.default_rng(2)
    params = make_params(rng)
    a = encode_type(params, 0, 0, FeatureVectorWithMask([2.0, 2.0, 0.0], [True] * 3), "bag_of_words")
    b = encode_type(params, 0, 0, FeatureVectorWithMask([1.0, 1.0, 0.0], [True] * 3), "bag_of_words")
    np.testing.assert_allclose(a, b)


def test_reconstruct_examples():
    rng = np.random.default_rng(3)
    params, inputs, _ = random_instance(rng, n_nodes=4, n_types=1)
    g = AffinityGraph.from_edges(["a", "b", "c", "d"], [(0, 1), (1, 2)])
    np.testing.assert_allclose(reconstruct(0, 0, g, params, inputs), encode_node(params, 0, 1, inputs[0]))
    mean = (encode_node(params, 0, 0, inputs[0]) + encode_node(params, 0, 2, inputs[0])) / 2
    np.testing.assert_allclose(reconstruct(1, 0, g, params, inputs), mean)
    with pytest.raises(NoNeighbors):
        reconstruct(3, 0, g, params, inputs)


def test_margin_loss_examples():
    o = np.zeros(2)
    assert margin_loss(o, np.array([1.0, 0.0]), np.array([7.0, 0.0]), 5.0) == 0.0
    assert margin_loss(o, np.array([0.0, 2.0]), np.array([3.0, 0.0]), 5.0) == 4.0
    h = np.array([0.3, -1.0])
    assert margin_loss(o, h, h, 5.0) == 5.0


def test_loss_gradient_edge_cases():
    o = np.zeros(2)
    for g in loss_gradients(o, np.array([1.0, 0.0]), np.array([7.0, 0.0]), 5.0):
        assert not g.any()
    h = np.array([1.0, 1.0])
    g_t, g_v, g_u = loss_gradients(h, h.copy(), np.array([2.0, 1.0]), 5.0)
    assert not g_v.any()
    np.testing.assert_allclose(g_u, [-1.0, 0.0])  # (h_t - h_u) / |h_t - h_u|


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params, inputs, graph = random_instance(rng)
    batch = rng.permutation(10)[:4]
    negatives = (batch + rng.integers(1, 10, size=4)) % 10
    assert gradient_relative_error(params, inputs, graph, batch, negatives, 5.0) < 1e-4


def test_batch_loss_equals_sum_of_node_losses():
    rng = np.random.default_rng(5)
    params, inputs, graph = random_instance(rng)
    batch = np.arange(10)
    negatives = (batch + 3) % 10
    loss, _, _ = batch_loss_and_grads(params, inputs, neighbor_mean_operator(graph), batch, negatives, 5.0)
    assert loss == pytest.approx(summed_node_loss(params, inputs, graph, batch, negatives, 5.0), rel=1e-12)


def test_adam_scalar_trace():
    # frozen from a hand-rolled scalar Adam on f(x) = (x - 3)^2, x0 = 1, lr 0.1
    x = np.array([1.0])
    opt = Adam([x], lr=0.1)
    expected = [1.09999999975, 1.1998335138842988, 1.2993766079535347]
    for want in expected:
        opt.step([x], [2 * (x - 3.0)])
        assert x[0] == pytest.approx(want, rel=1e-12)


def test_missing_flag_distinguishes_zero_inputs():
    rng = np.random.default_rng(0)
    ti = TypeInputs("t", np.zeros((2, 3)), np.array([False, True]))
    params = init_params([ti], 8, rng)
    h = encode_all(params, [ti])[0]
    assert not h[0].any() and h[1].any()


def test_init_scale():
    rng = np.random.default_rng(0)
    ti = TypeInputs("t", np.zeros((50, 400)), np.ones(50, dtype=bool))
    params = init_params([ti], 32, rng)
    assert np.abs(params.w1[0]).max() <= 1 / 20
    assert np.abs(params.w2[0]).max() <= 1 / np.sqrt(32)


def test_isolated_graph_leaves_params_at_init():
    rng = np.random.default_rng(9)
    _, inputs, _ = random_instance(rng, n_nodes=6)
    g = AffinityGraph(["a", "b", "c", "d", "e", "f"], [np.array([], dtype=int)] * 6)
    cfg = TrainConfig(iterations=3, batch_size=4, dim=4, seed=2)
    with pytest.warns(SkippedNodesWarning, match="100.0%"):
        result = train(inputs, g, cfg)
    assert result.skipped_fraction == 1.0
    ref = init_params(inputs, 4, np.random.default_rng(2))
    for a, b in zip(result.params.arrays(), ref.arrays()):
        np.testing.assert_array_equal(a, b)
    for h in encode_all(result.params, inputs):
        assert np.isfinite(h).all()


def test_empty_graph():
    with pytest.raises(EmptyGraph):
        train([TypeInputs("t", np.zeros((0, 1)), np.zeros(0, dtype=bool))], AffinityGraph([], []))


def test_self_loops_remove_skips():
    rng = np.random.default_rng(1)
    _, inputs, _ = random_instance(rng, n_nodes=5)
    g = AffinityGraph(list("abcde"), [np.array([], dtype=int)] * 5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        result = train(inputs, g, TrainConfig(iterations=2, dim=4, self_loops=True))
    assert result.n_skipped == 0


@pytest.fixture(scope="module")
def two_cluster_run():
    ds, clusters = generate_with_clusters(SyntheticConfig(n_episodes=150, n_clusters=2), 4)
    feats = featurize_dataset(ds)
    g, _, _ = graph_from_dataset(ds, SkipgramConfig(dim=20, epochs=3))
    inputs = encoder_inputs(feats, "all")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = train(inputs, g, TrainConfig(iterations=40, batch_size=64, seed=1))
    return result, inputs, clusters


def test_training_reduces_loss(two_cluster_run):
    result, _, _ = two_cluster_run
    assert result.loss_trace[-1] < result.loss_trace[0]


def test_training_separates_clusters(two_cluster_run):
    result, inputs, clusters = two_cluster_run
    h = np.hstack(encode_all(result.params, inputs))
    d = np.linalg.norm(h[:, None, :] - h[None, :, :], axis=2)
    same = clusters[:, None] == clusters[None, :]
    off = ~np.eye(len(clusters), dtype=bool)
    assert d[same & off].mean() < d[~same].mean()


def test_every_node_type_pair_is_finite(two_cluster_run):
    result, inputs, _ = two_cluster_run
    for ti, h in zip(inputs, encode_all(result.params, inputs)):
        assert h.shape == (len(ti.missing), 32) and np.isfinite(h).all()
    assert inputs[-1].type_id == "identity" and inputs[-1].missing.all()


def test_training_is_deterministic():
    rng = np.random.default_rng(0)
    _, inputs, graph = random_instance(rng, n_nodes=12)
    cfg = TrainConfig(iterations=5, batch_size=5, dim=4, seed=3)
    a, b = train(inputs, graph, cfg), train(inputs, graph, cfg)
    for x, y in zip(a.params.arrays(), b.params.arrays()):
        assert x.tobytes() == y.tobytes()


def test_params_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    params, _, _ = random_instance(rng)
    params.save(tmp_path / "params.bin")
    raw = (tmp_path / "params.bin").read_bytes()
    assert raw[:4] == b"EPMD"
    again = EncoderParams.load(tmp_path / "params.bin")
    assert again.type_ids == params.type_ids
    for x, y in zip(again.arrays(), params.arrays()):
        np.testing.assert_array_equal(x, y)


def test_identity_inputs():
    ti = identity_inputs(3)
    assert ti.domain_dim == 0 and ti.missing.all()
