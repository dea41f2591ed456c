"""Error-versus-missingness profiles, per-attribute MAE deltas and embedding contributions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .errors import Misalignment, MissingProvenance
from .linear import LogisticModel, Model, RidgeModel
from .representations import GRAPH_SOURCE_TYPE, RepresentationMatrix


def attribute_observed(dataset: Dataset, ids: Sequence[str] | None = None) -> tuple[list[str], np.ndarray]:
    """Attribute-level observed flags: each series variable, note type and demographic attribute."""
    names, getters = [], []
    for mod in dataset.schema:
        if mod.kind == "categorical_group" and mod.type_id == GRAPH_SOURCE_TYPE:
            continue
        for attr in mod.attribute_names:
            names.append(attr)
            if mod.kind == "numeric_group":
                getters.append(lambda ep, a=attr: bool(ep.series.get(a)))
            elif mod.kind == "bag_of_words":
                getters.append(lambda ep, a=attr: a in ep.notes)
            else:
                getters.append(lambda ep, a=attr: ep.categoricals.get(a) is not None)
    by_id = {ep.episode_id: ep for ep in dataset.episodes}
    ids = list(ids) if ids is not None else dataset.ids
    flags = np.array([[g(by_id[i]) for g in getters] for i in ids], dtype=bool).reshape(len(ids), len(names))
    return names, flags


# --------------------------------------------------------------------------


@dataclass
class MissingnessProfile:
    bins: list[int]
    counts: list[int]
    mean_error: dict[str, list[float]]
    mean_delta: list[float]  # mean(error_embedded - error_raw); nan for empty bins

    def write(self, path) -> None:
        reps = sorted(self.mean_error)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("# delta = mean(abs error embedded - abs error raw) per number of missing attributes\n")
            w = csv.writer(fh)
            w.writerow(["n_missing", "count", "delta"] + [f"mean_error_{r}" for r in reps])
            for k, b in enumerate(self.bins):
                w.writerow([b, self.counts[k], _fmt(self.mean_delta[k])] + [_fmt(self.mean_error[r][k]) for r in reps])


def missingness_error_profile(
    errors: Mapping[str, Sequence[float]], missing_counts: Sequence[int], n_attributes: int
) -> MissingnessProfile:
    """Bin test episodes by their number of missing attributes (0..n_attributes).

    ``errors`` maps representation name to per-episode errors aligned with
    ``missing_counts``; it must contain ``embedded`` and ``raw``.
    """
    counts_arr = np.asarray(missing_counts, dtype=int)
    errs = {k: np.asarray(v, dtype=float) for k, v in errors.items()}
    for name, e in errs.items():
        if e.shape != counts_arr.shape:
            raise Misalignment(f"errors for {name!r} have {e.size} rows, expected {counts_arr.size}")
    if "embedded" not in errs or "raw" not in errs:
        raise Misalignment("need errors for both 'embedded' and 'raw'")
    if counts_arr.size and (counts_arr.min() < 0 or counts_arr.max() > n_attributes):
        raise Misalignment("missing counts outside 0..n_attributes")
    bins = list(range(n_attributes + 1))
    counts, delta = [], []
    mean_error = {k: [] for k in errs}
    diff = errs["embedded"] - errs["raw"]
    for b in bins:
        sel = counts_arr == b
        counts.append(int(sel.sum()))
        delta.append(float(diff[sel].mean()) if sel.any() else math.nan)
        for k, e in errs.items():
            mean_error[k].append(float(e[sel].mean()) if sel.any() else math.nan)
    return MissingnessProfile(bins, counts, mean_error, delta)


# --------------------------------------------------------------------------


@dataclass
class FeatureDelta:
    feature: str
    percent_observed: float
    mae_observed: float
    mae_missing: float
    delta: float | None  # None when one stratum is empty


def feature_mae_delta(errors: Sequence[float], observed: np.ndarray, names: Sequence[str]) -> list[FeatureDelta]:
    """(MAE where observed - MAE where missing) / overall MAE, per attribute."""
    err = np.abs(np.asarray(errors, dtype=float))
    observed = np.asarray(observed, dtype=bool)
    if observed.shape != (err.size, len(names)):
        raise Misalignment("observed flags must be n_episodes x n_attributes")
    overall = float(err.mean()) if err.size else math.nan
    out = []
    for j, name in enumerate(names):
        obs = observed[:, j]
        pct = 100.0 * float(obs.mean()) if err.size else math.nan
        if obs.all() or not obs.any():
            out.append(FeatureDelta(name, pct, math.nan, math.nan, None))
            continue
        m_obs, m_miss = float(err[obs].mean()), float(err[~obs].mean())
        diff = m_obs - m_miss
        out.append(FeatureDelta(name, pct, m_obs, m_miss, 0.0 if diff == 0.0 else diff / overall))
    return out


def write_feature_deltas(deltas: Mapping[str, list[FeatureDelta]], path) -> None:
    """Long format: feature, representation, stratum, value."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# delta = (MAE observed - MAE missing) / MAE overall; undefined when a stratum is empty\n")
        w = csv.writer(fh)
        w.writerow(["feature", "representation", "stratum", "value"])
        for rep in sorted(deltas):
            for d in deltas[rep]:
                w.writerow([d.feature, rep, "percent_observed", _fmt(d.percent_observed)])
                w.writerow([d.feature, rep, "mae_observed", _fmt(d.mae_observed)])
                w.writerow([d.feature, rep, "mae_missing", _fmt(d.mae_missing)])
                w.writerow([d.feature, rep, "delta", "undefined" if d.delta is None else _fmt(d.delta)])


# --------------------------------------------------------------------------


@dataclass
class FeatureContribution:
    feature: str
    mean_abs: float
    mean_observed: float
    mean_missing: float
    ratio: float | None


@dataclass
class ContributionReport:
    rows: list[FeatureContribution]

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("# contribution = |sum_j h_j(v) w_j| over the feature's columns; ratio = observed / missing mean\n")
            w = csv.writer(fh)
            w.writerow(["feature", "stratum", "value"])
            for r in self.rows:
                w.writerow([r.feature, "all", _fmt(r.mean_abs)])
                w.writerow([r.feature, "observed", _fmt(r.mean_observed)])
                w.writerow([r.feature, "missing", _fmt(r.mean_missing)])
                w.writerow([r.feature, "ratio", "undefined" if r.ratio is None else _fmt(r.ratio)])


def _model_weights(model: Model, class_index: int) -> tuple[np.ndarray, float]:
    if isinstance(model, RidgeModel):
        return model.coef, model.intercept
    if isinstance(model, LogisticModel):
        row = 0 if model.coef.shape[0] == 1 else class_index
        return model.coef[row], float(model.intercept[row])
    raise TypeError(f"unsupported model {type(model).__name__}")


def feature_groups(matrix: RepresentationMatrix) -> list[tuple[str, np.ndarray]]:
    """Column groups keyed by type; raw columns of a combined matrix get a ``[raw]`` suffix."""
    groups: dict[str, list[int]] = {}
    for j, col in enumerate(matrix.columns):
        name = col.type_id if col.source == "embedding" else f"{col.type_id} [raw]"
        groups.setdefault(name, []).append(j)
    return [(k, np.array(v)) for k, v in groups.items()]


def signed_contributions(model: Model, matrix: RepresentationMatrix, rows=None, class_index: int = 1):
    """(names, n x F matrix of signed per-feature contributions)."""
    if not matrix.columns:
        raise MissingProvenance("representation carries no column provenance")
    w, _ = _model_weights(model, class_index)
    if w.size != matrix.dim:
        raise MissingProvenance(f"model has {w.size} weights but representation has {matrix.dim} columns")
    X = matrix.values if rows is None else matrix.values[rows]
    groups = feature_groups(matrix)
    contrib = np.column_stack([X[:, cols] @ w[cols] for _, cols in groups]) if groups else np.zeros((X.shape[0], 0))
    return [name for name, _ in groups], contrib


def feature_contribution(
    model: Model,
    matrix: RepresentationMatrix,
    observed: Mapping[str, np.ndarray],
    rows=None,
    class_index: int = 1,
) -> ContributionReport:
    """Mean |contribution| per feature, split by the feature's observed flag.

    ``observed`` maps type_id to a boolean array aligned with ``rows``.
    """
    names, contrib = signed_contributions(model, matrix, rows, class_index)
    mag = np.abs(contrib)
    out = []
    for k, name in enumerate(names):
        base = name.removesuffix(" [raw]")
        flags = observed.get(base)
        col = mag[:, k]
        if flags is None:
            flags = np.ones(col.size, dtype=bool)
        flags = np.asarray(flags, dtype=bool)
        if flags.size != col.size:
            raise Misalignment(f"observed flags for {base!r} do not match the rows")
        m_obs = float(col[flags].mean()) if flags.any() else math.nan
        m_miss = float(col[~flags].mean()) if (~flags).any() else math.nan
        ratio = m_obs / m_miss if (~flags).any() and flags.any() and m_miss > 0 else None
        out.append(FeatureContribution(name, float(col.mean()) if col.size else math.nan, m_obs, m_miss, ratio))
    return ContributionReport(out)


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"
