"""Fixed-length numeric inputs with per-entry observation masks.

Masked-out convention: wherever ``mask`` is False the value is exactly 0.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset, Episode, ModalitySchema
from .errors import DimensionMismatch, EmptyCorpus, ValidationError

SEGMENTS = ("entire", "first10", "first25", "first50", "last10", "last25", "last50")
STATS = ("count", "min", "max", "mean", "std", "skew", "kurtosis", "median", "maxad")
FEATURES_PER_VARIABLE = len(SEGMENTS) * len(STATS)

AGE_BUCKETS = tuple(f"{10 * i}-{10 * i + 9}" for i in range(9)) + ("90+",)
OTHER_LEVEL = "other"


@dataclass(frozen=True)
class FeatureVectorWithMask:
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != mask.shape:
            raise DimensionMismatch(f"values {values.shape} vs mask {mask.shape}")
        values = np.where(mask, values, 0.0)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    def __len__(self):
        return len(self.values)


# --------------------------------------------------------------------------
# Time series


def segment_series(points: Sequence[tuple[float, float]], window: float = 48.0) -> list[list[float]]:
    """Split a series into [entire, first10, first25, first50, last10, last25, last50].

    Membership uses the timestamp as a fraction of the window with closed
    bounds: first-p keeps t <= p*window, last-p keeps t >= (1-p)*window.
    """
    out = [[v for _, v in points]]
    for p in (0.10, 0.25, 0.50):
        out.append([v for t, v in points if t <= p * window])
    for p in (0.10, 0.25, 0.50):
        out.append([v for t, v in points if t >= (1.0 - p) * window])
    return out


def segment_stats(values: Sequence[float]) -> tuple[np.ndarray, bool]:
    """Nine summary statistics in ``STATS`` order plus an observed flag.

    Population moments; skew and excess kurtosis are 0 when the variance is 0.
    """
    if len(values) == 0:
        return np.zeros(len(STATS)), False
    x = np.asarray(values, dtype=float)
    n = x.size
    mean = x.mean()
    dev = x - mean
    m2 = np.mean(dev**2)
    if m2 > 0.0:
        m3 = np.mean(dev**3)
        m4 = np.mean(dev**4)
        skew = m3 / m2**1.5
        kurt = m4 / m2**2 - 3.0
    else:
        skew = kurt = 0.0
    median = np.median(x)
    maxad = np.max(np.abs(x - median))
    stats = np.array([n, x.min(), x.max(), mean, math.sqrt(m2), skew, kurt, median, maxad])
    return stats, True


def timeseries_feature_names(variables: Sequence[str]) -> list[str]:
    return [f"{var}|{seg}|{stat}" for var in variables for seg in SEGMENTS for stat in STATS]


def build_timeseries_features(
    episode: Episode, variables: Sequence[str], window: float = 48.0
) -> FeatureVectorWithMask:
    values = np.zeros(FEATURES_PER_VARIABLE * len(variables))
    mask = np.zeros(values.shape, dtype=bool)
    for j, var in enumerate(variables):
        points = episode.series.get(var)
        if not points:
            continue
        for s, seg in enumerate(segment_series(points, window)):
            stats, observed = segment_stats(seg)
            if observed:
                start = j * FEATURES_PER_VARIABLE + s * len(STATS)
                values[start : start + len(STATS)] = stats
                mask[start : start + len(STATS)] = True
    return FeatureVectorWithMask(values, mask)


# --------------------------------------------------------------------------
# Text


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    document_frequency: tuple[float, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens = [line for line in Path(path).read_text(encoding="utf-8").split("\n") if line]
        return cls(tuple(tokens), tuple(float("nan") for _ in tokens))


def build_vocab(corpus: Iterable[Sequence[str]], min_frac: float = 0.001, max_frac: float = 0.90) -> Vocabulary:
    """Keep tokens whose document frequency is strictly inside (min_frac, max_frac)."""
    if not 0.0 <= min_frac < max_frac <= 1.0:
        raise ValidationError("need 0 <= min_frac < max_frac <= 1")
    df = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        df.update(set(doc))
    if n_docs == 0:
        raise EmptyCorpus("cannot build a vocabulary from zero documents")
    kept = sorted(t for t, c in df.items() if min_frac < c / n_docs < max_frac)
    return Vocabulary(tuple(kept), tuple(df[t] / n_docs for t in kept))


def build_bow(episode: Episode, note_type: str, vocab: Vocabulary) -> FeatureVectorWithMask:
    tokens = episode.notes.get(note_type)
    if tokens is None:
        return FeatureVectorWithMask(np.zeros(len(vocab)), np.zeros(len(vocab), dtype=bool))
    counts = np.zeros(len(vocab))
    for tok in tokens:
        j = vocab.index.get(tok)
        if j is not None:
            counts[j] += 1.0
    return FeatureVectorWithMask(counts, np.ones(len(vocab), dtype=bool))


def fit_idf(counts: np.ndarray, present: np.ndarray) -> np.ndarray:
    """Smoothed idf, ln((1+N)/(1+df)) + 1, over the documents flagged present."""
    docs = counts[present]
    n = docs.shape[0]
    df = (docs > 0).sum(axis=0)
    return np.log((1.0 + n) / (1.0 + df)) + 1.0


def tfidf_transform(counts: np.ndarray, idf: np.ndarray) -> np.ndarray:
    out = counts * idf
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return np.divide(out, norms, out=np.zeros_like(out), where=norms > 0)


# --------------------------------------------------------------------------
# Categorical


def age_bucket(age: str) -> int:
    value = float(age)
    if not math.isfinite(value) or value < 0:
        raise ValidationError(f"invalid age {age!r}")
    return min(int(value // 10), 9)


@dataclass(frozen=True)
class CategoricalEncoder:
    """One-hot block per attribute; training levels plus ``other``, fixed decades for age."""

    attributes: tuple[str, ...]
    levels: tuple[tuple[str, ...], ...]

    @classmethod
    def fit(cls, episodes: Iterable[Episode], attributes: Sequence[str]) -> "CategoricalEncoder":
        seen = {a: set() for a in attributes}
        for ep in episodes:
            for a in attributes:
                v = ep.categoricals.get(a)
                if v is not None and a != "age":
                    seen[a].add(v)
        levels = []
        for a in attributes:
            if a == "age":
                levels.append(AGE_BUCKETS)
            else:
                levels.append(tuple(sorted(seen[a] - {OTHER_LEVEL})) + (OTHER_LEVEL,))
        return cls(tuple(attributes), tuple(levels))

    @property
    def dim(self) -> int:
        return sum(len(lv) for lv in self.levels)

    def column_names(self) -> list[str]:
        return [f"{a}={lv}" for a, levels in zip(self.attributes, self.levels) for lv in levels]

    def transform(self, episode: Episode) -> FeatureVectorWithMask:
        values = np.zeros(self.dim)
        mask = np.zeros(self.dim, dtype=bool)
        start = 0
        for a, levels in zip(self.attributes, self.levels):
            v = episode.categoricals.get(a)
            if v is not None:
                if a == "age":
                    j = age_bucket(v)
                else:
                    j = levels.index(v) if v in levels else len(levels) - 1
                values[start + j] = 1.0
                mask[start : start + len(levels)] = True
            start += len(levels)
        return FeatureVectorWithMask(values, mask)


def encode_categoricals(episode: Episode, encoder: CategoricalEncoder) -> FeatureVectorWithMask:
    return encoder.transform(episode)


# --------------------------------------------------------------------------
# Standardization


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, mask: np.ndarray) -> "Standardizer":
        """Per-feature mean/std over observed entries of the rows passed in."""
        values = np.asarray(values, dtype=float)
        mask = np.asarray(mask, dtype=bool)
        count = mask.sum(axis=0)
        safe = np.maximum(count, 1)
        mean = np.where(mask, values, 0.0).sum(axis=0) / safe
        var = np.where(mask, (values - mean) ** 2, 0.0).sum(axis=0) / safe
        std = np.sqrt(var)
        std = np.where((count == 0) | (std == 0.0), 1.0, std)
        mean = np.where(count == 0, 0.0, mean)
        return cls(mean, std)

    def transform(self, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return np.where(mask, (values - self.mean) / self.std, 0.0)


fit_standardizer = Standardizer.fit


# --------------------------------------------------------------------------
# Whole-dataset featurization


@dataclass
class FeatureMatrix:
    type_id: str
    kind: str
    ids: list[str]
    columns: list[str]
    values: np.ndarray
    mask: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def type_missing(self) -> np.ndarray:
        """Type-level missing flag: any entry of the type unobserved."""
        if self.dim == 0:
            return np.ones(len(self.ids), dtype=bool)
        return ~self.mask.all(axis=1)

    def type_absent(self) -> np.ndarray:
        """True when no entry of the type is observed."""
        if self.dim == 0:
            return np.ones(len(self.ids), dtype=bool)
        return ~self.mask.any(axis=1)


@dataclass
class FeaturizedDataset:
    ids: list[str]
    split: list[str]
    types: dict[str, FeatureMatrix]
    vocabularies: dict[str, Vocabulary]
    standardizer: Standardizer | None

    @property
    def train_rows(self) -> np.ndarray:
        return np.array([s == "train" for s in self.split])

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {"ids_split": [[i, s] for i, s in zip(self.ids, self.split)], "types": []}
        for type_id, fm in self.types.items():
            sub = type_dir_name(type_id)
            write_feature_matrix(fm, out_dir / sub)
            meta["types"].append({"type_id": type_id, "kind": fm.kind, "dir": sub})
            if type_id in self.vocabularies:
                self.vocabularies[type_id].save(out_dir / sub / "vocab.txt")
        if self.standardizer is not None:
            np.savez(out_dir / "standardizer.npz", mean=self.standardizer.mean, std=self.standardizer.std)
        (out_dir / "types.json").write_text(json.dumps(meta, indent=1) + "\n")

    @classmethod
    def load(cls, in_dir) -> "FeaturizedDataset":
        in_dir = Path(in_dir)
        meta = json.loads((in_dir / "types.json").read_text())
        ids = [i for i, _ in meta["ids_split"]]
        split = [s for _, s in meta["ids_split"]]
        types, vocabs = {}, {}
        for t in meta["types"]:
            types[t["type_id"]] = read_feature_matrix(in_dir / t["dir"], t["type_id"], t["kind"])
            if (in_dir / t["dir"] / "vocab.txt").exists():
                vocabs[t["type_id"]] = Vocabulary.load(in_dir / t["dir"] / "vocab.txt")
        std = None
        if (in_dir / "standardizer.npz").exists():
            z = np.load(in_dir / "standardizer.npz")
            std = Standardizer(z["mean"], z["std"])
        return cls(ids, split, types, vocabs, std)


def type_dir_name(type_id: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in type_id.lower())


def featurize_dataset(dataset: Dataset, min_frac: float = 0.001, max_frac: float = 0.90) -> FeaturizedDataset:
    """Featurize every modality; vocabularies, levels and scaling come from the train split."""
    ids = dataset.ids
    split = [dataset.split[i] for i in ids]
    train_eps = [ep for ep in dataset.episodes if dataset.split[ep.episode_id] == "train"]
    train_rows = np.array([s == "train" for s in split])
    types: dict[str, FeatureMatrix] = {}
    vocabs: dict[str, Vocabulary] = {}
    standardizer = None

    for mod in dataset.schema:
        if mod.kind == "numeric_group":
            rows = [build_timeseries_features(ep, mod.attribute_names, dataset.window) for ep in dataset.episodes]
            values = np.array([r.values for r in rows]).reshape(len(rows), -1)
            mask = np.array([r.mask for r in rows]).reshape(len(rows), -1)
            standardizer = Standardizer.fit(values[train_rows], mask[train_rows])
            values = standardizer.transform(values, mask)
            columns = timeseries_feature_names(mod.attribute_names)
        elif mod.kind == "bag_of_words":
            note_type = mod.attribute_names[0]
            corpus = [ep.notes[note_type] for ep in train_eps if note_type in ep.notes]
            vocab = build_vocab(corpus, min_frac, max_frac) if corpus else Vocabulary((), ())
            vocabs[mod.type_id] = vocab
            rows = [build_bow(ep, note_type, vocab) for ep in dataset.episodes]
            values = np.array([r.values for r in rows]).reshape(len(rows), len(vocab))
            mask = np.array([r.mask for r in rows]).reshape(len(rows), len(vocab))
            columns = list(vocab.tokens)
        else:
            encoder = CategoricalEncoder.fit(train_eps, mod.attribute_names)
            rows = [encoder.transform(ep) for ep in dataset.episodes]
            values = np.array([r.values for r in rows]).reshape(len(rows), encoder.dim)
            mask = np.array([r.mask for r in rows]).reshape(len(rows), encoder.dim)
            columns = encoder.column_names()
        types[mod.type_id] = FeatureMatrix(mod.type_id, mod.kind, list(ids), columns, values, mask)

    return FeaturizedDataset(list(ids), split, types, vocabs, standardizer)


def schema_with_dims(schema: Sequence[ModalitySchema], feats: FeaturizedDataset) -> list[ModalitySchema]:
    return [ModalitySchema(m.type_id, m.kind, m.attribute_names, feats.types[m.type_id].dim) for m in schema]


# --------------------------------------------------------------------------
# CSV interface


def _fmt(x: float) -> str:
    return repr(float(x))


def write_feature_matrix(fm: FeatureMatrix, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "features.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode_id"] + fm.columns)
        for eid, row in zip(fm.ids, fm.values):
            w.writerow([eid] + [_fmt(v) for v in row])
    with open(out_dir / "mask.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode_id"] + fm.columns)
        for eid, row in zip(fm.ids, fm.mask):
            w.writerow([eid] + [int(b) for b in row])


def read_feature_matrix(in_dir, type_id: str, kind: str) -> FeatureMatrix:
    in_dir = Path(in_dir)
    with open(in_dir / "features.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    with open(in_dir / "mask.csv", newline="", encoding="utf-8") as fh:
        mrows = list(csv.reader(fh))
    columns = rows[0][1:]
    ids = [r[0] for r in rows[1:]]
    values = np.array([[float(x) for x in r[1:]] for r in rows[1:]]).reshape(len(ids), len(columns))
    mask = np.array([[x == "1" for x in r[1:]] for r in mrows[1:]], dtype=bool).reshape(len(ids), len(columns))
    return FeatureMatrix(type_id, kind, ids, columns, values, mask)
