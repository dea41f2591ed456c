"""Episode affinity graph from admission-text sentence vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import ADMISSION_ATTRIBUTES, Dataset, Episode
from .errors import DimensionMismatch, MalformedRecord, ValidationError
from .skipgram import SkipgramConfig, WordVectors, train_skipgram


@dataclass(frozen=True)
class AdmissionDocument:
    episode_id: str
    tokens: tuple[str, ...]


def admission_document(episode: Episode, fields: Sequence[str] = ADMISSION_ATTRIBUTES) -> AdmissionDocument:
    text = " ".join(episode.categoricals[f] for f in fields if episode.categoricals.get(f))
    return AdmissionDocument(episode.episode_id, tuple(text.lower().split()))


def sentence_vector(tokens: Sequence[str], wv: WordVectors) -> np.ndarray:
    """Mean of the L2-normalized in-vocabulary word vectors; zeros if none."""
    acc = np.zeros(wv.dim)
    n = 0
    for tok in tokens:
        if tok not in wv:
            continue
        vec = wv[tok]
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            continue
        acc += vec / norm
        n += 1
    return acc / n if n else acc


class AffinityGraph:
    """Undirected graph over episodes stored as sorted neighbour index arrays."""

    def __init__(self, ids: Sequence[str], neighbors: Sequence[np.ndarray], self_loops: bool = False):
        self.ids = list(ids)
        self.neighbors = [np.asarray(nb, dtype=np.int64) for nb in neighbors]
        self.self_loops = self_loops
        if len(self.neighbors) != len(self.ids):
            raise ValidationError("one neighbour list per node required")

    @classmethod
    def from_edges(cls, ids: Sequence[str], edges, self_loops: bool = False) -> "AffinityGraph":
        adj = [set() for _ in ids]
        for i, j in edges:
            if i == j:
                continue
            adj[i].add(j)
            adj[j].add(i)
        if self_loops:
            for i, nb in enumerate(adj):
                nb.add(i)
        return cls(ids, [np.array(sorted(nb), dtype=np.int64) for nb in adj], self_loops)

    def __len__(self):
        return len(self.ids)

    def degree(self) -> np.ndarray:
        return np.array([nb.size for nb in self.neighbors])

    def edges(self) -> list[tuple[int, int]]:
        return [(i, int(j)) for i, nb in enumerate(self.neighbors) for j in nb if i < j]

    @property
    def n_edges(self) -> int:
        return len(self.edges())

    def is_symmetric(self) -> bool:
        sets = [set(nb.tolist()) for nb in self.neighbors]
        return all(i in sets[j] for i, nb in enumerate(sets) for j in nb)

    def with_self_loops(self) -> "AffinityGraph":
        return AffinityGraph.from_edges(self.ids, self.edges(), self_loops=True)

    def write(self, path) -> None:
        lines = []
        for i, j in self.edges():
            a, b = sorted((self.ids[i], self.ids[j]))
            lines.append(f"{a}\t{b}\n")
        lines.sort()
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def read(cls, path, ids: Sequence[str], self_loops: bool = False) -> "AffinityGraph":
        pos = {eid: k for k, eid in enumerate(ids)}
        edges = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2 or parts[0] not in pos or parts[1] not in pos:
                    raise MalformedRecord(f"bad edge line {line.rstrip()!r}", lineno)
                edges.append((pos[parts[0]], pos[parts[1]]))
        return cls.from_edges(ids, edges, self_loops)


def build_graph(
    vectors, threshold: float = 0.9, ids: Sequence[str] | None = None, block: int = 256
) -> AffinityGraph:
    """Connect i, j when exp(-||v_i - v_j||) > threshold (strict)."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError("threshold must lie in (0, 1)")
    try:
        vecs = np.asarray(vectors, dtype=float)
    except ValueError:
        raise DimensionMismatch("vectors have differing dimensions") from None
    if vecs.ndim != 2:
        raise DimensionMismatch("vectors have differing dimensions")
    n = vecs.shape[0]
    ids = list(ids) if ids is not None else [str(i) for i in range(n)]
    neighbors = []
    for start in range(0, n, block):
        chunk = vecs[start : start + block]
        dist = np.sqrt(((chunk[:, None, :] - vecs[None, :, :]) ** 2).sum(axis=2))
        linked = np.exp(-dist) > threshold
        for r in range(chunk.shape[0]):
            linked[r, start + r] = False
            neighbors.append(np.flatnonzero(linked[r]))
    return AffinityGraph(ids, neighbors)


def graph_from_dataset(
    dataset: Dataset,
    config: SkipgramConfig = SkipgramConfig(),
    threshold: float = 0.9,
    word_vectors: WordVectors | None = None,
) -> tuple[AffinityGraph, WordVectors, np.ndarray]:
    """Train (or reuse) word vectors on admission documents and threshold their sentence vectors."""
    docs = [admission_document(ep) for ep in dataset.episodes]
    if word_vectors is None:
        word_vectors = train_skipgram([d.tokens for d in docs], config)
    sent = np.array([sentence_vector(d.tokens, word_vectors) for d in docs]).reshape(len(docs), word_vectors.dim)
    return build_graph(sent, threshold, ids=[d.episode_id for d in docs]), word_vectors, sent


def neg_log_threshold(threshold: float) -> float:
    return -math.log(threshold)
