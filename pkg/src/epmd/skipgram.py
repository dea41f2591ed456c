"""Skipgram word vectors with negative sampling, trained sequentially in numpy."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyCorpus, MalformedRecord


@dataclass(frozen=True)
class SkipgramConfig:
    dim: int = 50
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    min_count: int = 1
    lr: float = 0.025
    seed: int = 0


class WordVectors:
    def __init__(self, tokens: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] != len(tokens):
            raise ValueError("need one vector row per token")
        self.tokens = tuple(tokens)
        self.vectors = vectors
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, token) -> bool:
        return token in self.index

    def __getitem__(self, token) -> np.ndarray:
        return self.vectors[self.index[token]]

    def __len__(self):
        return len(self.tokens)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.tokens)} {self.dim}\n")
            for tok, vec in zip(self.tokens, self.vectors):
                fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")

    @classmethod
    def load(cls, path) -> "WordVectors":
        """Read the ``N d`` header text format (also accepts fastText ``.vec`` files)."""
        with open(Path(path), encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise MalformedRecord("vector file header must be 'N d'", 1)
            n, d = int(header[0]), int(header[1])
            tokens, rows = [], []
            for lineno, line in enumerate(fh, start=2):
                parts = line.rstrip("\n").rstrip(" ").split(" ")
                if len(parts) != d + 1:
                    raise MalformedRecord(f"expected {d} components, got {len(parts) - 1}", lineno)
                tokens.append(parts[0])
                rows.append([float(x) for x in parts[1:]])
        if len(tokens) != n:
            raise MalformedRecord(f"header announces {n} vectors, found {len(tokens)}")
        return cls(tokens, np.array(rows).reshape(n, d))


def train_skipgram(documents: Sequence[Sequence[str]], config: SkipgramConfig = SkipgramConfig()) -> WordVectors:
    counts = Counter(tok for doc in documents for tok in doc)
    vocab = sorted(t for t, c in counts.items() if c >= config.min_count)
    if not vocab:
        raise EmptyCorpus("no tokens reach min_count")
    index = {t: i for i, t in enumerate(vocab)}
    corpus = [np.array([index[t] for t in doc if t in index], dtype=np.int64) for doc in documents]
    corpus = [doc for doc in corpus if doc.size]

    rng = np.random.default_rng(config.seed)
    dim = config.dim
    w_in = (rng.random((len(vocab), dim)) - 0.5) / dim
    w_out = np.zeros((len(vocab), dim))

    noise = np.array([counts[t] for t in vocab], dtype=float) ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0

    total = config.epochs * sum(doc.size for doc in corpus)
    processed = 0
    labels = np.zeros(config.negatives + 1)
    labels[0] = 1.0
    for _ in range(config.epochs):
        for doc in corpus:
            for pos, center in enumerate(doc):
                lr = config.lr * max(1.0 - processed / total, 1e-4)
                processed += 1
                span = int(rng.integers(1, config.window + 1))
                lo, hi = max(0, pos - span), min(doc.size, pos + span + 1)
                for cpos in range(lo, hi):
                    if cpos == pos:
                        continue
                    negs = np.searchsorted(noise_cdf, rng.random(config.negatives), side="right")
                    targets = np.concatenate(([doc[cpos]], negs))
                    v = w_in[center]
                    score = 1.0 / (1.0 + np.exp(-(w_out[targets] @ v)))
                    g = (labels - score) * lr
                    grad_in = g @ w_out[targets]
                    np.add.at(w_out, targets, np.outer(g, v))
                    w_in[center] += grad_in
    return WordVectors(vocab, w_in)
