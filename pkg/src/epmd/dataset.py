"""Episode data model, JSONL/CSV ingestion, category mapping and subset sampling."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateEpisodeId,
    MalformedRecord,
    SubsetTooLarge,
    UnknownAttribute,
    UnmappedCategory,
    ValidationError,
)

WINDOW_HOURS = 48.0

TIMESERIES_VARIABLES = (
    "Capillary refill rate",
    "Diastolic blood pressure",
    "Fraction inspired oxygen",
    "Glascow coma scale eye opening",
    "Glascow coma scale motor response",
    "Glascow coma scale total",
    "Glascow coma scale verbal response",
    "Glucose",
    "Heart Rate",
    "Height",
    "Mean blood pressure",
    "Oxygen saturation",
    "Respiratory rate",
    "Systolic blood pressure",
    "Temperature",
    "Weight",
    "pH",
)

# Discharge summaries are never used as predictors.
NOTE_TYPES = (
    "NOTE NURSING BOW",
    "NOTE RADIOLOGY BOW",
    "NOTE RESPITORY BOW",
    "NOTE ECG BOW",
    "NOTE ECHO BOW",
    "NOTE OTHER BOW",
)

DEMOGRAPHIC_ATTRIBUTES = ("ethnicity", "gender", "age", "insurance", "marital_status")
ADMISSION_ATTRIBUTES = ("admission_type", "admission_location", "diagnosis")

DD_CLASSES = ("MORTALITY_INHOSPITAL", "HOME", "REHAB", "SNF", "LEFT", "TRANSFER")

KINDS = ("numeric_group", "bag_of_words", "categorical_group")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class ModalitySchema:
    type_id: str
    kind: str
    attribute_names: tuple[str, ...]
    domain_dim: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown modality kind {self.kind!r}")
        if not self.attribute_names:
            raise ValidationError(f"modality {self.type_id!r} has no attributes")
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))

    def to_json(self) -> dict:
        return {
            "type_id": self.type_id,
            "kind": self.kind,
            "attribute_names": list(self.attribute_names),
            "domain_dim": self.domain_dim,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ModalitySchema":
        return cls(obj["type_id"], obj["kind"], tuple(obj["attribute_names"]), obj.get("domain_dim"))


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str
    num_classes: int | None = None


TASKS = {
    "mort": TaskSpec("mort", "binary", 2),
    "los": TaskSpec("los", "regression", None),
    "dd": TaskSpec("dd", "multiclass", len(DD_CLASSES)),
}


@dataclass(frozen=True)
class Episode:
    """One ICU episode; absent keys in any map denote missing data."""

    episode_id: str
    series: dict[str, tuple[tuple[float, float], ...]] = field(default_factory=dict)
    notes: dict[str, tuple[str, ...]] = field(default_factory=dict)
    categoricals: dict[str, str | None] = field(default_factory=dict)
    labels: dict[str, object] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "series": {k: [[t, v] for t, v in pts] for k, pts in self.series.items()},
            "notes": {k: list(toks) for k, toks in self.notes.items()},
            "categoricals": dict(self.categoricals),
            "labels": dict(self.labels),
        }


@dataclass(frozen=True)
class Dataset:
    schema: tuple[ModalitySchema, ...]
    episodes: tuple[Episode, ...]
    split: dict[str, str]
    window: float = WINDOW_HOURS

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "episodes", tuple(self.episodes))
        ids = set()
        for ep in self.episodes:
            if ep.episode_id in ids:
                raise DuplicateEpisodeId(f"duplicate episode_id {ep.episode_id!r}")
            ids.add(ep.episode_id)
        if set(self.split) != ids:
            raise ValidationError("split must assign every episode exactly once")
        bad = {s for s in self.split.values() if s not in SPLITS}
        if bad:
            raise ValidationError(f"unknown split values {sorted(bad)}")
        type_ids = [m.type_id for m in self.schema]
        if len(set(type_ids)) != len(type_ids):
            raise ValidationError("modality type_ids must be unique")

    @property
    def ids(self) -> list[str]:
        return [ep.episode_id for ep in self.episodes]

    def ids_in(self, split: str) -> list[str]:
        return [ep.episode_id for ep in self.episodes if self.split[ep.episode_id] == split]

    def modality(self, type_id: str) -> ModalitySchema:
        for m in self.schema:
            if m.type_id == type_id:
                return m
        raise KeyError(type_id)

    def modalities(self, kind: str) -> list[ModalitySchema]:
        return [m for m in self.schema if m.kind == kind]


def default_schema(
    variables: Sequence[str] = TIMESERIES_VARIABLES,
    note_types: Sequence[str] = NOTE_TYPES,
) -> tuple[ModalitySchema, ...]:
    schema = [ModalitySchema("timeseries", "numeric_group", tuple(variables))]
    schema += [ModalitySchema(nt, "bag_of_words", (nt,)) for nt in note_types]
    schema.append(ModalitySchema("demographics", "categorical_group", DEMOGRAPHIC_ATTRIBUTES))
    schema.append(ModalitySchema("admission", "categorical_group", ADMISSION_ATTRIBUTES))
    return tuple(schema)


# --------------------------------------------------------------------------
# Serialization


def _validate_labels(labels, lineno):
    if not isinstance(labels, dict):
        raise MalformedRecord("labels must be an object", lineno)
    out = {}
    for task, value in labels.items():
        if task not in TASKS:
            raise MalformedRecord(f"unknown task {task!r}", lineno)
        if value is None:
            continue
        if task == "mort":
            if value not in (0, 1) or isinstance(value, bool):
                raise MalformedRecord(f"mort label must be 0 or 1, got {value!r}", lineno)
            value = int(value)
        elif task == "los":
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
                raise MalformedRecord(f"los must be a non-negative real, got {value!r}", lineno)
            value = float(value)
        elif value not in DD_CLASSES:
            raise MalformedRecord(f"dd label {value!r} is not a mapped destination", lineno)
        out[task] = value
    return out


def parse_episode(obj, schema, window=WINDOW_HOURS, lineno=None) -> Episode:
    if not isinstance(obj, dict):
        raise MalformedRecord("record must be a JSON object", lineno)
    eid = obj.get("episode_id")
    if not isinstance(eid, str) or not eid:
        raise MalformedRecord("missing or empty episode_id", lineno)

    series_names = {a for m in schema if m.kind == "numeric_group" for a in m.attribute_names}
    note_names = {a for m in schema if m.kind == "bag_of_words" for a in m.attribute_names}
    cat_names = {a for m in schema if m.kind == "categorical_group" for a in m.attribute_names}

    series = {}
    for name, pts in (obj.get("series") or {}).items():
        if name not in series_names:
            raise UnknownAttribute(f"line {lineno}: unknown series {name!r}")
        try:
            parsed = [(float(t), float(v)) for t, v in pts]
        except (TypeError, ValueError) as exc:
            raise MalformedRecord(f"bad series points for {name!r}: {exc}", lineno) from None
        for t, v in parsed:
            if not (0.0 <= t <= window) or not math.isfinite(v):
                raise MalformedRecord(f"series {name!r} point ({t}, {v}) outside [0, {window}]", lineno)
        parsed.sort(key=lambda p: p[0])
        series[name] = tuple(parsed)

    notes = {}
    for name, toks in (obj.get("notes") or {}).items():
        if name not in note_names:
            raise UnknownAttribute(f"line {lineno}: unknown note type {name!r}")
        if not isinstance(toks, list) or not all(isinstance(t, str) for t in toks):
            raise MalformedRecord(f"notes for {name!r} must be a token list", lineno)
        notes[name] = tuple(toks)

    cats = {}
    for name, val in (obj.get("categoricals") or {}).items():
        if name not in cat_names:
            raise UnknownAttribute(f"line {lineno}: unknown categorical {name!r}")
        if val is not None and not isinstance(val, str):
            raise MalformedRecord(f"categorical {name!r} must be a string or null", lineno)
        cats[name] = val

    labels = _validate_labels(obj.get("labels") or {}, lineno)
    return Episode(eid, series, notes, cats, labels)


def load_dataset(path, schema: Sequence[ModalitySchema] | None = None, window: float = WINDOW_HOURS) -> Dataset:
    """Read ``episodes.jsonl`` and ``split.csv`` from ``path``.

    When ``schema`` is omitted, ``schema.json`` in the directory is used if
    present, otherwise :func:`default_schema`.
    """
    path = Path(path)
    if schema is None:
        schema_file = path / "schema.json"
        if schema_file.exists():
            meta = json.loads(schema_file.read_text())
            schema = [ModalitySchema.from_json(m) for m in meta["modalities"]]
            window = float(meta.get("window", window))
        else:
            schema = default_schema()
    schema = tuple(schema)

    episodes = []
    seen = set()
    with open(path / "episodes.jsonl", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON: {exc.msg}", lineno) from None
            ep = parse_episode(obj, schema, window, lineno)
            if ep.episode_id in seen:
                raise DuplicateEpisodeId(f"line {lineno}: duplicate episode_id {ep.episode_id!r}")
            seen.add(ep.episode_id)
            episodes.append(ep)

    split = {}
    with open(path / "split.csv", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["episode_id", "split"]:
            raise MalformedRecord("split.csv header must be 'episode_id,split'", 1)
        for lineno, row in enumerate(reader, start=2):
            eid, s = row["episode_id"], row["split"]
            if s not in SPLITS:
                raise MalformedRecord(f"split must be train or test, got {s!r}", lineno)
            if eid in split:
                raise MalformedRecord(f"episode {eid!r} assigned twice", lineno)
            if eid not in seen:
                raise MalformedRecord(f"split references unknown episode {eid!r}", lineno)
            split[eid] = s
    missing = seen - set(split)
    if missing:
        raise ValidationError(f"{len(missing)} episodes have no split assignment, e.g. {sorted(missing)[0]!r}")
    return Dataset(schema, episodes, split, window)


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "episodes.jsonl", "w", encoding="utf-8") as fh:
        for ep in dataset.episodes:
            fh.write(json.dumps(ep.to_json(), separators=(",", ":")) + "\n")
    with open(path / "split.csv", "w", encoding="utf-8") as fh:
        fh.write("episode_id,split\n")
        for ep in dataset.episodes:
            fh.write(f"{ep.episode_id},{dataset.split[ep.episode_id]}\n")
    meta = {"window": dataset.window, "modalities": [m.to_json() for m in dataset.schema]}
    (path / "schema.json").write_text(json.dumps(meta, indent=2) + "\n")


# --------------------------------------------------------------------------
# Category mapping


def load_mapping(path) -> dict[str, str]:
    """Parse a ``RAW<TAB>MAPPED`` file; ``#`` starts a comment line."""
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if "\t" not in line:
                raise MalformedRecord("mapping lines must be RAW<TAB>MAPPED", lineno)
            raw, mapped = line.split("\t", 1)
            mapping[raw.strip()] = mapped.strip()
    return mapping


def shipped_mapping(name: str) -> dict[str, str]:
    """``name`` is ``"note_categories"`` or ``"discharge_locations"``."""
    with resources.as_file(resources.files("epmd") / "data" / f"{name}.tsv") as p:
        return load_mapping(p)


def map_category(raw: str, mapping: Mapping[str, str]) -> str:
    key = raw.strip()
    try:
        return mapping[key]
    except KeyError:
        raise UnmappedCategory(f"unmapped category {raw!r}") from None


# --------------------------------------------------------------------------
# Labels


def task_targets(dataset: Dataset, task: str, ids: Sequence[str]) -> np.ndarray:
    """Numeric targets for ``ids``: 0/1 for mort, days for los, class index for dd."""
    by_id = {ep.episode_id: ep for ep in dataset.episodes}
    out = []
    for eid in ids:
        value = by_id[eid].labels.get(task)
        if value is None:
            raise ValidationError(f"episode {eid!r} has no {task} label")
        out.append(DD_CLASSES.index(value) if task == "dd" else value)
    return np.asarray(out, dtype=float if task == "los" else int)


def sample_labeled_subset(dataset: Dataset, n: int, seed: int) -> frozenset[str]:
    train = dataset.ids_in("train")
    if n < 0:
        raise ValidationError("subset size must be non-negative")
    if n > len(train):
        raise SubsetTooLarge(f"requested {n} labeled episodes but only {len(train)} are in train")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(train), size=n, replace=False)
    return frozenset(train[i] for i in idx)
