"""Shared builders and brute-force oracles used by several test modules."""

import math

import numpy as np

from epmd.graph import AffinityGraph
from epmd.model import EncoderParams, TypeInputs, batch_loss_and_grads, neighbor_mean_operator, node_loss


def random_instance(rng, n_nodes=10, n_types=3, dim=4, max_domain=5):
    inputs = []
    for i in range(n_types):
        p = int(rng.integers(1, max_domain + 1))
        x1 = rng.normal(size=(n_nodes, p))
        missing = rng.random(n_nodes) < 0.5
        # missing rows keep only part of their entries
        holes = (rng.random((n_nodes, p)) < 0.5) & missing[:, None]
        x1[holes] = 0.0
        inputs.append(TypeInputs(f"t{i}", x1, missing))
    edges = [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes) if rng.random() < 0.3]
    edges += [(i, (i + 1) % n_nodes) for i in range(n_nodes)]  # nobody isolated
    graph = AffinityGraph.from_edges([f"n{i}" for i in range(n_nodes)], edges)
    params = EncoderParams(
        [ti.type_id for ti in inputs],
        [rng.normal(size=(ti.domain_dim, dim)) for ti in inputs],
        [rng.normal(size=(n_nodes, dim)) for _ in inputs],
    )
    return params, inputs, graph


def summed_node_loss(params, inputs, graph, batch, negatives, gamma):
    return sum(node_loss(params, inputs, graph, int(v), int(u), gamma) for v, u in zip(batch, negatives))


def finite_difference(params, inputs, graph, batch, negatives, gamma, step=1e-5):
    grads = []
    for w in params.arrays():
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + step
            up = summed_node_loss(params, inputs, graph, batch, negatives, gamma)
            w[idx] = old - step
            down = summed_node_loss(params, inputs, graph, batch, negatives, gamma)
            w[idx] = old
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def gradient_relative_error(params, inputs, graph, batch, negatives, gamma):
    _, g1, g2 = batch_loss_and_grads(params, inputs, neighbor_mean_operator(graph), batch, negatives, gamma)
    analytic = np.concatenate([g.ravel() for g in g1 + g2])
    numeric = np.concatenate([g.ravel() for g in finite_difference(params, inputs, graph, batch, negatives, gamma)])
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def oracle_stats(xs):
    """Plain-python population moments, written independently of numpy."""
    n = len(xs)
    mean = math.fsum(xs) / n
    m2 = math.fsum((x - mean) ** 2 for x in xs) / n
    m3 = math.fsum((x - mean) ** 3 for x in xs) / n
    m4 = math.fsum((x - mean) ** 4 for x in xs) / n
    s = sorted(xs)
    med = s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2
    skew = m3 / m2**1.5 if m2 > 0 else 0.0
    kurt = m4 / m2**2 - 3 if m2 > 0 else 0.0
    return [n, s[0], s[-1], mean, math.sqrt(m2), skew, kurt, med, max(abs(x - med) for x in xs)]


def brute_force_edges(vecs, threshold):
    edges = set()
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            if math.exp(-math.dist(vecs[i], vecs[j])) > threshold:
                edges.add((i, j))
    return edges


def clustered_vectors(rng, n, dim=3):
    centers = rng.normal(size=(8, dim))
    scale = rng.choice([0.003, 0.03, 0.3], size=n)[:, None]
    return centers[rng.integers(8, size=n)] + scale * rng.normal(size=(n, dim))


def pair_auc(scores, positive):
    """Brute force over all positive/negative pairs; ties count one half."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    twice = sum(2 if a > b else 1 if a == b else 0 for a in pos for b in neg)
    return twice / (2 * len(pos) * len(neg))


def brute_mc_auc(score_matrix, labels):
    classes = sorted(set(labels))
    c = len(classes)
    total = 0.0
    for a in range(c):
        for b in range(a + 1, c):
            i, j = classes[a], classes[b]
            rows = [r for r, y in enumerate(labels) if y in (i, j)]
            a_ij = pair_auc([score_matrix[r][i] for r in rows], [labels[r] == i for r in rows])
            a_ji = pair_auc([score_matrix[r][j] for r in rows], [labels[r] == j for r in rows])
            total += (a_ij + a_ji) / 2.0
    return 2.0 * total / (c * (c - 1))
