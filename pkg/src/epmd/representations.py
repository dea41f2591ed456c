"""Raw, embedded and combined episode representations with column provenance."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IdMisalignment, MalformedRecord, ValidationError
from .featurize import FeaturizedDataset, fit_idf, tfidf_transform
from .model import EncoderParams, TypeInputs, encode_all, identity_inputs, type_inputs

FLAVORS = ("raw", "embedded", "combined")
MODALITY_SETS = ("timeseries_only", "all")
# admission text builds the graph; raw features still see it as categoricals
GRAPH_SOURCE_TYPE = "admission"


@dataclass(frozen=True)
class ColumnLabel:
    type_id: str
    source: str  # "raw" or "embedding"
    index: int


@dataclass
class RepresentationMatrix:
    flavor: str
    ids: list[str]
    values: np.ndarray
    columns: list[ColumnLabel]

    def __post_init__(self):
        if self.values.shape != (len(self.ids), len(self.columns)):
            raise ValidationError(f"values {self.values.shape} do not match {len(self.ids)} ids x {len(self.columns)} columns")

    @property
    def dim(self) -> int:
        return len(self.columns)

    def row_index(self, ids: Sequence[str]) -> np.ndarray:
        pos = {eid: k for k, eid in enumerate(self.ids)}
        return np.array([pos[i] for i in ids], dtype=int)

    def columns_of(self, type_id: str, source: str | None = None) -> np.ndarray:
        return np.array(
            [j for j, c in enumerate(self.columns) if c.type_id == type_id and (source is None or c.source == source)],
            dtype=int,
        )

    def type_ids(self) -> list[str]:
        seen = []
        for c in self.columns:
            if c.type_id not in seen:
                seen.append(c.type_id)
        return seen

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("# col,type_id,source,index\n")
            for j, c in enumerate(self.columns):
                fh.write(f"# c{j},{c.type_id},{c.source},{c.index}\n")
            w = csv.writer(fh)
            w.writerow(["episode_id"] + [f"c{j}" for j in range(self.dim)])
            for eid, row in zip(self.ids, self.values):
                w.writerow([eid] + [repr(float(x)) for x in row])

    @classmethod
    def read(cls, path, flavor: str | None = None) -> "RepresentationMatrix":
        columns, ids, rows = [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            first = fh.readline()
            if not first.startswith("# col,type_id,source,index"):
                raise MalformedRecord("missing provenance header", 1)
            for line in fh:
                if line.startswith("# "):
                    rest = line[2:].rstrip("\n").split(",", 1)[1]
                    tid, src, idx = rest.rsplit(",", 2)
                    columns.append(ColumnLabel(tid, src, int(idx)))
                else:
                    break
            for row in csv.reader(fh):
                ids.append(row[0])
                rows.append([float(x) for x in row[1:]])
        if flavor is None:
            stem = Path(path).stem
            flavor = stem[5:] if stem.startswith("repr_") else stem
        return cls(flavor, ids, np.array(rows).reshape(len(ids), len(columns)), columns)


def embedding_types(feats: FeaturizedDataset, modality_set: str) -> list[str]:
    if modality_set not in MODALITY_SETS:
        raise ValidationError(f"unknown modality set {modality_set!r}")
    out = []
    for tid, fm in feats.types.items():
        if fm.kind == "numeric_group":
            out.append(tid)
        elif modality_set == "all" and tid != GRAPH_SOURCE_TYPE:
            out.append(tid)
    return out


def raw_types(feats: FeaturizedDataset, modality_set: str) -> list[str]:
    if modality_set not in MODALITY_SETS:
        raise ValidationError(f"unknown modality set {modality_set!r}")
    return [tid for tid, fm in feats.types.items() if modality_set == "all" or fm.kind == "numeric_group"]


def encoder_inputs(feats: FeaturizedDataset, modality_set: str) -> list[TypeInputs]:
    inputs = [type_inputs(feats.types[t]) for t in embedding_types(feats, modality_set)]
    if modality_set == "all":
        inputs.append(identity_inputs(len(feats.ids)))
    return inputs


def embedded_repr(params: EncoderParams, inputs: Sequence[TypeInputs], ids: Sequence[str]) -> RepresentationMatrix:
    """Row v = concat[h_1(v), ..., h_k(v)]."""
    blocks = encode_all(params, inputs)
    columns = [ColumnLabel(tid, "embedding", j) for tid, h in zip(params.type_ids, blocks) for j in range(h.shape[1])]
    return RepresentationMatrix("embedded", list(ids), np.hstack(blocks), columns)


def raw_repr(feats: FeaturizedDataset, type_ids: Sequence[str]) -> RepresentationMatrix:
    """Standardized series (missing -> 0, the training mean), TF-IDF text, one-hot categoricals."""
    train = feats.train_rows
    blocks, columns = [], []
    for tid in type_ids:
        fm = feats.types[tid]
        if fm.kind == "bag_of_words":
            present = fm.mask.any(axis=1) if fm.dim else np.zeros(len(fm.ids), dtype=bool)
            idf = fit_idf(fm.values, present & train)
            block = tfidf_transform(fm.values, idf)
        else:
            block = np.where(fm.mask, fm.values, 0.0)
        blocks.append(block)
        columns += [ColumnLabel(tid, "raw", j) for j in range(fm.dim)]
    values = np.hstack(blocks) if blocks else np.zeros((len(feats.ids), 0))
    return RepresentationMatrix("raw", list(feats.ids), values, columns)


def combined_repr(embedded: RepresentationMatrix, raw: RepresentationMatrix) -> RepresentationMatrix:
    if list(embedded.ids) != list(raw.ids):
        raise IdMisalignment("embedded and raw rows are not aligned")
    return RepresentationMatrix(
        "combined", list(embedded.ids), np.hstack([embedded.values, raw.values]), embedded.columns + raw.columns
    )
