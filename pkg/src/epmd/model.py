"""Embedding propagation with explicit missing-data embeddings.

Every attribute type i has two linear encoders. Observed data ``x1`` (missing
entries zeroed) goes through ``W1[i]``; a one-hot node indicator ``x2``, set
only when some entry of the type is missing for that node, selects a row of
the lookup table ``W2[i]``. A node's type embedding is the sum of the two.
Training pulls each embedding towards the mean embedding of its graph
neighbours and away from a random other node via a margin ranking loss.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, EmptyGraph, MalformedRecord, NoNeighbors, SkippedNodesWarning, ValidationError
from .featurize import FeatureMatrix, FeatureVectorWithMask, type_dir_name
from .graph import AffinityGraph

log = logging.getLogger(__name__)

IDENTITY_TYPE = "identity"
PARAMS_MAGIC = b"EPMD"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    batch_size: int = 256
    dim: int = 32
    margin: float = 5.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float | None = None
    seed: int = 0
    distance_epsilon: float = 1e-8
    self_loops: bool = False

    def validate(self) -> None:
        if self.margin <= 0:
            raise ValidationError("margin must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.iterations < 0 or self.dim < 1:
            raise ValidationError("iterations must be >= 0 and dim >= 1")


@dataclass
class TypeInputs:
    """Encoder inputs for one attribute type over all nodes."""

    type_id: str
    x1: np.ndarray
    missing: np.ndarray

    @property
    def domain_dim(self) -> int:
        return self.x1.shape[1]


def observed_input(values: np.ndarray, mask: np.ndarray, kind: str) -> np.ndarray:
    """x1 rows; bag-of-words counts become token proportions."""
    x1 = np.where(mask, values, 0.0)
    if kind == "bag_of_words":
        totals = x1.sum(axis=-1, keepdims=True)
        x1 = np.divide(x1, totals, out=np.zeros_like(x1), where=totals > 0)
    return x1


def type_inputs(fm: FeatureMatrix) -> TypeInputs:
    return TypeInputs(fm.type_id, observed_input(fm.values, fm.mask, fm.kind), fm.type_missing())


def identity_inputs(n_nodes: int) -> TypeInputs:
    """Pure per-node lookup: empty observed part, missing flag always on."""
    return TypeInputs(IDENTITY_TYPE, np.zeros((n_nodes, 0)), np.ones(n_nodes, dtype=bool))


@dataclass
class EncoderParams:
    type_ids: list[str]
    w1: list[np.ndarray]
    w2: list[np.ndarray]

    @property
    def dim(self) -> int:
        return self.w2[0].shape[1]

    @property
    def n_nodes(self) -> int:
        return self.w2[0].shape[0]

    def copy(self) -> "EncoderParams":
        return EncoderParams(list(self.type_ids), [w.copy() for w in self.w1], [w.copy() for w in self.w2])

    def arrays(self) -> list[np.ndarray]:
        return self.w1 + self.w2

    def save(self, path) -> None:
        """Little-endian dump: magic, version, count, then per type
        [len, type_id utf-8, domain_dim, d, W1 row-major, |V|, W2 row-major]."""
        out = bytearray(PARAMS_MAGIC)
        out += struct.pack("<II", PARAMS_VERSION, len(self.type_ids))
        for tid, w1, w2 in zip(self.type_ids, self.w1, self.w2):
            name = tid.encode("utf-8")
            out += struct.pack("<I", len(name)) + name
            out += struct.pack("<II", w1.shape[0], w1.shape[1])
            out += np.ascontiguousarray(w1, dtype="<f8").tobytes()
            out += struct.pack("<I", w2.shape[0])
            out += np.ascontiguousarray(w2, dtype="<f8").tobytes()
        Path(path).write_bytes(bytes(out))

    @classmethod
    def load(cls, path) -> "EncoderParams":
        buf = Path(path).read_bytes()
        if buf[:4] != PARAMS_MAGIC:
            raise MalformedRecord("not an EP-md parameter file")
        version, n_types = struct.unpack_from("<II", buf, 4)
        if version != PARAMS_VERSION:
            raise MalformedRecord(f"unsupported parameter file version {version}")
        off = 12
        type_ids, w1s, w2s = [], [], []
        for _ in range(n_types):
            (ln,) = struct.unpack_from("<I", buf, off)
            off += 4
            type_ids.append(buf[off : off + ln].decode("utf-8"))
            off += ln
            rows, d = struct.unpack_from("<II", buf, off)
            off += 8
            w1s.append(np.frombuffer(buf, "<f8", rows * d, off).reshape(rows, d).astype(float))
            off += 8 * rows * d
            (nv,) = struct.unpack_from("<I", buf, off)
            off += 4
            w2s.append(np.frombuffer(buf, "<f8", nv * d, off).reshape(nv, d).astype(float))
            off += 8 * nv * d
        return cls(type_ids, w1s, w2s)


def init_params(inputs: Sequence[TypeInputs], dim: int, rng: np.random.Generator, init_scale=None) -> EncoderParams:
    n = inputs[0].x1.shape[0]
    w1, w2 = [], []
    for ti in inputs:
        s1 = init_scale if init_scale is not None else 1.0 / np.sqrt(max(ti.domain_dim, 1))
        s2 = init_scale if init_scale is not None else 1.0 / np.sqrt(dim)
        w1.append(rng.uniform(-s1, s1, size=(ti.domain_dim, dim)))
        w2.append(rng.uniform(-s2, s2, size=(n, dim)))
    return EncoderParams([ti.type_id for ti in inputs], w1, w2)


# --------------------------------------------------------------------------
# Per-node operations


def encode_type(
    params: EncoderParams, i: int, v: int, inputs: FeatureVectorWithMask, kind: str = "numeric_group"
) -> np.ndarray:
    """x1^T W1[i] + x2^T W2[i] for node ``v``; x2 is on iff some entry is missing."""
    w1 = params.w1[i]
    if len(inputs) != w1.shape[0]:
        raise DimensionMismatch(f"type {params.type_ids[i]!r} expects {w1.shape[0]} inputs, got {len(inputs)}")
    x1 = observed_input(inputs.values, inputs.mask, kind)
    out = x1 @ w1
    if len(inputs) == 0 or not inputs.mask.all():
        out = out + params.w2[i][v]
    return out


def encode_node(params: EncoderParams, i: int, v: int, ti: TypeInputs) -> np.ndarray:
    out = ti.x1[v] @ params.w1[i]
    if ti.missing[v]:
        out = out + params.w2[i][v]
    return out


def encode_all(params: EncoderParams, inputs: Sequence[TypeInputs]) -> list[np.ndarray]:
    """Embedding matrix (n x d) per type."""
    return [ti.x1 @ w1 + ti.missing[:, None] * w2 for ti, w1, w2 in zip(inputs, params.w1, params.w2)]


def reconstruct(v: int, i: int, graph: AffinityGraph, params: EncoderParams, inputs: Sequence[TypeInputs]) -> np.ndarray:
    """Elementwise mean of the neighbours' type-i embeddings."""
    nb = graph.neighbors[v]
    if nb.size == 0:
        raise NoNeighbors(f"node {graph.ids[v]!r} has no neighbours")
    return np.mean([encode_node(params, i, int(u), inputs[i]) for u in nb], axis=0)


def margin_loss(h_tilde, h_v, h_u, gamma: float) -> float:
    return max(0.0, gamma + float(np.linalg.norm(h_tilde - h_v)) - float(np.linalg.norm(h_tilde - h_u)))


def loss_gradients(h_tilde, h_v, h_u, gamma: float, eps: float = 1e-8):
    """Gradients of :func:`margin_loss` w.r.t. (h_tilde, h_v, h_u)."""
    a = h_tilde - h_v
    b = h_tilde - h_u
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if gamma + na - nb <= 0.0:
        z = np.zeros_like(a)
        return z, z.copy(), z.copy()
    ga = a / max(na, eps)
    gb = b / max(nb, eps)
    return ga - gb, -ga, gb


def node_loss(params: EncoderParams, inputs: Sequence[TypeInputs], graph: AffinityGraph, v: int, u: int, gamma: float) -> float:
    """Sum over types of the margin loss for node ``v`` against negative ``u``."""
    total = 0.0
    for i in range(len(inputs)):
        h_t = reconstruct(v, i, graph, params, inputs)
        total += margin_loss(h_t, encode_node(params, i, v, inputs[i]), encode_node(params, i, u, inputs[i]), gamma)
    return total


# --------------------------------------------------------------------------
# Batched loss and gradient


def neighbor_mean_operator(graph: AffinityGraph) -> sp.csr_matrix:
    n = len(graph)
    rows, cols, vals = [], [], []
    for v, nb in enumerate(graph.neighbors):
        if nb.size:
            rows.append(np.full(nb.size, v))
            cols.append(nb)
            vals.append(np.full(nb.size, 1.0 / nb.size))
    if not rows:
        return sp.csr_matrix((n, n))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def batch_loss_and_grads(
    params: EncoderParams,
    inputs: Sequence[TypeInputs],
    mean_op: sp.csr_matrix,
    batch: np.ndarray,
    negatives: np.ndarray,
    gamma: float,
    eps: float = 1e-8,
):
    """Summed loss over (batch node, type) terms and gradients for W1, W2.

    ``batch`` must only contain nodes with at least one neighbour.
    """
    op = mean_op[batch]
    loss = 0.0
    g1, g2 = [], []
    for ti, w1, w2 in zip(inputs, params.w1, params.w2):
        h = ti.x1 @ w1 + ti.missing[:, None] * w2
        h_t = op @ h
        a = h_t - h[batch]
        b = h_t - h[negatives]
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        terms = gamma + na - nb
        active = terms > 0.0
        loss += float(terms[active].sum())
        ga = a / np.maximum(na, eps)[:, None] * active[:, None]
        gb = b / np.maximum(nb, eps)[:, None] * active[:, None]
        dh = np.zeros_like(h)
        np.add.at(dh, batch, -ga)
        np.add.at(dh, negatives, gb)
        dh += op.T @ (ga - gb)
        g1.append(ti.x1.T @ dh)
        g2.append(ti.missing[:, None] * dh)
    return loss, g1, g2


class Adam:
    """Bias-corrected Adam over a list of arrays, updated in place."""

    def __init__(self, arrays: Sequence[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: EncoderParams
    loss_trace: list[float] = field(default_factory=list)
    n_skipped: int = 0
    n_nodes: int = 0

    @property
    def skipped_fraction(self) -> float:
        return self.n_skipped / self.n_nodes if self.n_nodes else 0.0


def train(inputs: Sequence[TypeInputs], graph: AffinityGraph, config: TrainConfig = TrainConfig()) -> TrainResult:
    config.validate()
    n = len(graph)
    if n == 0:
        raise EmptyGraph("graph has no nodes")
    if not inputs:
        raise ValidationError("at least one attribute type is required")
    for ti in inputs:
        if ti.x1.shape[0] != n or ti.missing.shape != (n,):
            raise DimensionMismatch(f"type {ti.type_id!r} has {ti.x1.shape[0]} rows for {n} nodes")
    if config.self_loops:
        graph = graph.with_self_loops()

    rng = np.random.default_rng(config.seed)
    params = init_params(inputs, config.dim, rng, config.init_scale)
    arrays = params.arrays()
    opt = Adam(arrays, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    mean_op = neighbor_mean_operator(graph)
    has_nb = graph.degree() > 0
    n_skipped = int((~has_nb).sum())
    if n_skipped:
        warnings.warn(
            f"{n_skipped}/{n} nodes ({100.0 * n_skipped / n:.1f}%) have no neighbours; "
            "their contrastive terms are skipped",
            SkippedNodesWarning,
            stacklevel=2,
        )

    trace = []
    for epoch in range(config.iterations):
        order = rng.permutation(n)
        epoch_loss, epoch_terms = 0.0, 0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            neg = rng.integers(0, n - 1, size=batch.size) if n > 1 else np.zeros(batch.size, dtype=np.int64)
            neg = neg + (neg >= batch)
            keep = has_nb[batch] & (n > 1)
            batch, neg = batch[keep], neg[keep]
            if batch.size:
                loss, g1, g2 = batch_loss_and_grads(
                    params, inputs, mean_op, batch, neg, config.margin, config.distance_epsilon
                )
                epoch_loss += loss
                epoch_terms += batch.size
            else:
                g1 = [np.zeros_like(w) for w in params.w1]
                g2 = [np.zeros_like(w) for w in params.w2]
            opt.step(arrays, g1 + g2)
        trace.append(epoch_loss / epoch_terms if epoch_terms else 0.0)
        if epoch % 50 == 0 or epoch == config.iterations - 1:
            log.debug("epoch %d mean loss %.4f", epoch, trace[-1])
    return TrainResult(params, trace, n_skipped, n)


def write_embeddings(params: EncoderParams, inputs: Sequence[TypeInputs], ids: Sequence[str], out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for tid, h in zip(params.type_ids, encode_all(params, inputs)):
        with open(out_dir / f"embeddings_{type_dir_name(tid)}.csv", "w", encoding="utf-8") as fh:
            fh.write("episode_id," + ",".join(f"e{j}" for j in range(h.shape[1])) + "\n")
            for eid, row in zip(ids, h):
                fh.write(eid + "," + ",".join(repr(float(x)) for x in row) + "\n")
