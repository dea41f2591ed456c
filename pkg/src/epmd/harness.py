"""Benchmark orchestration: plan, label-audited runs, checkpoints and markdown result tables."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import math
import multiprocessing
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis
from .dataset import TASKS, Dataset, load_dataset, sample_labeled_subset, task_targets
from .errors import PlanError, TestLabelAccess, ValidationError
from .featurize import FeaturizedDataset, featurize_dataset
from .graph import AffinityGraph, graph_from_dataset
from .linear import Hyper, cv_select, default_grid, fit_model, load_grid, predict
from .metrics import auroc, mae, mc_auroc
from .model import IDENTITY_TYPE, EncoderParams, TrainConfig, train
from .representations import (
    FLAVORS,
    MODALITY_SETS,
    RepresentationMatrix,
    combined_repr,
    embedded_repr,
    encoder_inputs,
    embedding_types,
    raw_repr,
    raw_types,
)
from .skipgram import SkipgramConfig
from .stats import benjamini_hochberg, paired_t_test

log = logging.getLogger(__name__)

DEFAULT_SIZES = (10, 20, 50, 100, 500, 1000, 5000, "all")
# best single-task LSTM mort AuROC from the MIMIC-III benchmark; drawn as a reference line
LSTM_MORT_REFERENCE = 0.855
METRIC_NAMES = {"mort": "AuROC", "dd": "mc-AuROC", "los": "MAE (days)"}
MODALITY_TITLES = {"timeseries_only": "time series attribute type only", "all": "all attribute types"}
REPORT_COLUMNS = ("combined", "embedded", "raw")
COMPARISONS = (("embedded", "raw"), ("combined", "raw"), ("combined", "embedded"))


@dataclass
class ExperimentPlan:
    tasks: tuple[str, ...] = ("mort", "los", "dd")
    representations: tuple[str, ...] = FLAVORS
    sizes: tuple | None = None  # None = defaults that fit the training split
    repeats: int = 20
    seed: int = 0
    modality_sets: tuple[str, ...] = MODALITY_SETS
    train: TrainConfig = field(default_factory=TrainConfig)
    skipgram: SkipgramConfig = field(default_factory=SkipgramConfig)
    threshold: float = 0.9
    cv_folds: int = 3
    grid: str | None = None  # optional grid.json path
    analysis_size: int | None = 100
    threads: int = 1

    def validate(self) -> None:
        if self.repeats < 1:
            raise PlanError("repeats must be at least 1")
        for t in self.tasks:
            if t not in TASKS:
                raise PlanError(f"unknown task {t!r}")
        for r in self.representations:
            if r not in FLAVORS:
                raise PlanError(f"unknown representation {r!r}")
        for m in self.modality_sets:
            if m not in MODALITY_SETS:
                raise PlanError(f"unknown modality set {m!r}")
        if not self.tasks or not self.representations or not self.modality_sets:
            raise PlanError("plan needs at least one task, representation and modality set")
        if self.sizes is not None:
            for s in self.sizes:
                if s != "all" and (not isinstance(s, int) or isinstance(s, bool) or s < 1):
                    raise PlanError(f"bad subset size {s!r}")
        if self.cv_folds < 2:
            raise PlanError("cv_folds must be at least 2")
        if self.threads < 1:
            raise PlanError("threads must be at least 1")
        try:
            self.train.validate()
        except ValidationError as exc:
            raise PlanError(str(exc)) from None

    def resolve_sizes(self, n_train: int) -> list:
        if self.sizes is None:
            return [s for s in DEFAULT_SIZES if s == "all" or s < n_train]
        for s in self.sizes:
            if s != "all" and s > n_train:
                raise PlanError(f"subset size {s} exceeds the {n_train} training episodes")
        out = []
        for s in self.sizes:
            if s not in out:
                out.append(s)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sizes"] = list(self.sizes) if self.sizes is not None else None
        for k in ("tasks", "representations", "modality_sets"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentPlan":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise PlanError(f"unknown plan fields {sorted(unknown)}")
        kw = dict(obj)
        try:
            if "train" in kw and isinstance(kw["train"], dict):
                kw["train"] = TrainConfig(**kw["train"])
            if "skipgram" in kw and isinstance(kw["skipgram"], dict):
                kw["skipgram"] = SkipgramConfig(**kw["skipgram"])
        except TypeError as exc:
            raise PlanError(str(exc)) from None
        for k in ("tasks", "representations", "modality_sets"):
            if k in kw:
                kw[k] = tuple(kw[k])
        if kw.get("sizes") is not None:
            kw["sizes"] = tuple(kw["sizes"])
        plan = cls(**kw)
        plan.validate()
        return plan

    def fingerprint(self) -> str:
        d = self.to_dict()
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------


class LabelStore:
    """Hands out labels and records every read.

    Test-split labels are only released inside :meth:`evaluation`.
    """

    def __init__(self, dataset: Dataset):
        self._dataset = dataset
        self._phase = "fit"
        self.audit: list[tuple[str, str, str, int]] = []

    @property
    def phase(self) -> str:
        return self._phase

    @contextlib.contextmanager
    def evaluation(self):
        prev, self._phase = self._phase, "evaluation"
        try:
            yield self
        finally:
            self._phase = prev

    def targets(self, task: str, ids: Sequence[str]) -> np.ndarray:
        splits = {self._dataset.split[i] for i in ids}
        if "test" in splits and self._phase != "evaluation":
            raise TestLabelAccess(f"test labels for {task!r} requested during the {self._phase} phase")
        for s in sorted(splits):
            self.audit.append((self._phase, task, s, sum(self._dataset.split[i] == s for i in ids)))
        return task_targets(self._dataset, task, ids)

    def test_reads_outside_evaluation(self) -> int:
        return sum(1 for phase, _, split, _ in self.audit if split == "test" and phase != "evaluation")


# --------------------------------------------------------------------------


def size_label(size) -> str:
    return "all" if size == "all" else str(int(size))


def subset_for(dataset: Dataset, size, seed: int) -> list[str]:
    """Episode ids of a labeled subset, in dataset order; ``all`` is the whole train split."""
    train_ids = dataset.ids_in("train")
    if size == "all":
        return train_ids
    chosen = sample_labeled_subset(dataset, size, seed)
    return [i for i in train_ids if i in chosen]


def unit_seeds(plan: ExperimentPlan, size) -> list[int]:
    # a full-train draw is deterministic, so it runs once
    return [plan.seed] if size == "all" else [plan.seed + r for r in range(plan.repeats)]


def score_predictions(task: str, predictions: np.ndarray, y: np.ndarray) -> float:
    kind = TASKS[task].kind
    if kind == "regression":
        return mae(predictions, y)
    if kind == "binary":
        return auroc(predictions[:, 1], y)
    return mc_auroc(predictions, y)


@dataclass
class Workspace:
    """Everything shared by the per-(task, size, seed) fits."""

    dataset: Dataset
    feats: FeaturizedDataset
    matrices: dict[str, dict[str, RepresentationMatrix]]  # modality set -> flavor -> matrix
    test_ids: list[str]
    grids: dict[str, list[Hyper]]


def fit_and_predict(ws: Workspace, store: LabelStore, task: str, flavor: str, modality_set: str, ids, seed: int, folds: int):
    y = store.targets(task, ids)
    mat = ws.matrices[modality_set][flavor]
    X = mat.values[mat.row_index(ids)]
    spec = TASKS[task]
    best = cv_select(X, y, spec, ws.grids[task], k=folds, seed=seed).best
    model = fit_model(X, y, spec, best)
    return model, predict(model, mat.values[mat.row_index(ws.test_ids)])


def run_unit(ws: Workspace, plan: ExperimentPlan, task: str, size, seed: int):
    """Fit every (modality set, representation) on one labeled subset; scores and the label audit."""
    store = LabelStore(ws.dataset)
    ids = subset_for(ws.dataset, size, seed)
    preds = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for ms in plan.modality_sets:
            for flavor in plan.representations:
                _, preds[ms, flavor] = fit_and_predict(ws, store, task, flavor, ms, ids, seed, plan.cv_folds)
    with store.evaluation():
        y_test = store.targets(task, ws.test_ids)
    scores = {ms: {f: score_predictions(task, preds[ms, f], y_test) for f in plan.representations} for ms in plan.modality_sets}
    return scores, store.audit


_POOL_STATE: dict = {}


def _pool_unit(key):
    task, size, seed = key
    return key, run_unit(_POOL_STATE["ws"], _POOL_STATE["plan"], task, size, seed)


# --------------------------------------------------------------------------


@dataclass
class ExperimentReport:
    plan: ExperimentPlan
    sizes: list
    n_train: int
    n_episodes: int
    values: dict  # (task, modality set, flavor, size label) -> per-seed list
    seeds: dict  # size label -> seeds used
    significance: list[dict] = field(default_factory=list)
    audit_test_reads_before_eval: int = 0

    def cell(self, task, ms, flavor, size) -> tuple[float, float]:
        v = np.asarray(self.values[task, ms, flavor, size_label(size)], dtype=float)
        return float(v.mean()), float(v.std())  # population std: a single draw gives exactly 0

    def compute_significance(self, alpha: float = 0.05) -> None:
        rows = []
        for task in self.plan.tasks:
            for ms in self.plan.modality_sets:
                for size in self.sizes:
                    lab = size_label(size)
                    for a, b in COMPARISONS:
                        if a not in self.plan.representations or b not in self.plan.representations:
                            continue
                        va, vb = self.values[task, ms, a, lab], self.values[task, ms, b, lab]
                        if len(va) < 2:
                            continue
                        res = paired_t_test(va, vb)
                        rows.append(dict(task=task, modality_set=ms, size=lab, a=a, b=b, mean_a=float(np.mean(va)),
                                         mean_b=float(np.mean(vb)), t=res.t, p=res.p))
        rejected, adjusted = benjamini_hochberg([r["p"] for r in rows], alpha)
        for r, rej, adj in zip(rows, rejected, adjusted):
            r["p_adjusted"] = float(adj)
            r["significant"] = bool(rej)
        self.significance = rows

    def significant(self, task, ms, size, a, b) -> bool:
        for r in self.significance:
            if (r["task"], r["modality_set"], r["size"], r["a"], r["b"]) == (task, ms, size_label(size), a, b):
                return r["significant"]
        return False

    def render_tables(self) -> str:
        lines = [
            "# EP-md benchmark report",
            "",
            f"Transductive setting: the affinity graph and EP-md embeddings were learned from all "
            f"{self.n_episodes} episodes (train and test) without labels; only downstream models saw labels.",
            f"Reference: best single-task LSTM, mort AuROC = {LSTM_MORT_REFERENCE:.3f}.",
            "Cells are mean ± population std over seeds; the full-train row is a single draw.",
            "",
        ]
        cols = [c for c in REPORT_COLUMNS if c in self.plan.representations]
        for task in self.plan.tasks:
            for ms in self.plan.modality_sets:
                lines.append(f"## {task}, {MODALITY_TITLES[ms]} ({METRIC_NAMES[task]})")
                lines.append("")
                lines.append("| Number of labeled episodes | " + " | ".join(cols) + " |")
                lines.append("|---|" + "---|" * len(cols))
                for size in self.sizes:
                    n = self.n_train if size == "all" else size
                    cells = []
                    for c in cols:
                        m, s = self.cell(task, ms, c, size)
                        cells.append(f"{m:.3f} ± {s:.3f}")
                    lines.append(f"| {n} | " + " | ".join(cells) + " |")
                if task == "mort":
                    lines.append("")
                    lines.append(f"LSTM reference: {LSTM_MORT_REFERENCE:.3f}")
                lines.append("")
        return "\n".join(lines)

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.md").write_text(self.render_tables(), encoding="utf-8")
        with open(out_dir / "results.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["task", "modality_set", "representation", "size", "n_labeled", "seed", "value"])
            for task in self.plan.tasks:
                for ms in self.plan.modality_sets:
                    for f in self.plan.representations:
                        for size in self.sizes:
                            lab = size_label(size)
                            n = self.n_train if size == "all" else size
                            for seed, v in zip(self.seeds[lab], self.values[task, ms, f, lab]):
                                w.writerow([task, ms, f, lab, n, seed, repr(float(v))])
        with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["task", "metric", "modality_set", "representation", "size", "n_labeled", "mean", "std", "n_seeds"])
            for task in self.plan.tasks:
                for ms in self.plan.modality_sets:
                    for f in self.plan.representations:
                        for size in self.sizes:
                            m, s = self.cell(task, ms, f, size)
                            n = self.n_train if size == "all" else size
                            w.writerow([task, METRIC_NAMES[task], ms, f, size_label(size), n, f"{m:.6f}", f"{s:.6f}",
                                        len(self.values[task, ms, f, size_label(size)])])
            w.writerow(["mort", "AuROC", "reference", "lstm", "all", self.n_train, f"{LSTM_MORT_REFERENCE:.6f}", "", ""])
        with open(out_dir / "significance.csv", "w", newline="", encoding="utf-8") as fh:
            fh.write("# paired t-test per size over seeds; Benjamini-Hochberg across all rows, alpha 0.05\n")
            w = csv.writer(fh)
            w.writerow(["task", "modality_set", "size", "a", "b", "mean_a", "mean_b", "t", "p", "p_adjusted", "significant"])
            for r in self.significance:
                w.writerow([r["task"], r["modality_set"], r["size"], r["a"], r["b"], f"{r['mean_a']:.6f}",
                            f"{r['mean_b']:.6f}", f"{r['t']:.6f}", f"{r['p']:.6g}", f"{r['p_adjusted']:.6g}",
                            int(r["significant"])])

    @classmethod
    def from_results(cls, out_dir) -> "ExperimentReport":
        """Rebuild a report from ``plan.json`` and ``results.csv`` in a bench output directory."""
        out_dir = Path(out_dir)
        meta = json.loads((out_dir / "plan.json").read_text())
        plan = ExperimentPlan.from_dict(meta["plan"])
        values, seeds = {}, {}
        with open(out_dir / "results.csv", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = (row["task"], row["modality_set"], row["representation"], row["size"])
                values.setdefault(key, []).append(float(row["value"]))
                lab_seeds = seeds.setdefault(row["size"], [])
                if int(row["seed"]) not in lab_seeds:
                    lab_seeds.append(int(row["seed"]))
        sizes = [s if s == "all" else int(s) for s in meta["sizes"]]
        report = cls(plan, sizes, meta["n_train"], meta["n_episodes"], values, seeds)
        report.compute_significance()
        return report


# --------------------------------------------------------------------------


def _json_dump(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    tmp.replace(path)


def build_embeddings(feats, graph, plan, out_dir: Path | None) -> dict[str, tuple[EncoderParams, list]]:
    """One EP-md run per modality set, cached under ``embeddings/<set>/``."""
    out = {}
    for ms in plan.modality_sets:
        inputs = encoder_inputs(feats, ms)
        cache = out_dir / "embeddings" / ms if out_dir is not None else None
        key = {"train": asdict(plan.train), "types": [t.type_id for t in inputs], "fingerprint": plan.fingerprint()}
        if cache is not None and (cache / "params.bin").exists() and (cache / "key.json").exists():
            if json.loads((cache / "key.json").read_text()) == key:
                out[ms] = (EncoderParams.load(cache / "params.bin"), inputs)
                continue
        log.info("training EP-md embeddings for %s", ms)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = train(inputs, graph, plan.train)
        if cache is not None:
            cache.mkdir(parents=True, exist_ok=True)
            result.params.save(cache / "params.bin")
            _json_dump(cache / "key.json", key)
        out[ms] = (result.params, inputs)
    return out


def prepare_workspace(dataset: Dataset, plan: ExperimentPlan, out_dir: Path | None = None):
    feats = featurize_dataset(dataset)
    graph, _, _ = graph_from_dataset(dataset, plan.skipgram, plan.threshold)
    embeddings = build_embeddings(feats, graph, plan, out_dir)
    matrices = {}
    for ms in plan.modality_sets:
        params, inputs = embeddings[ms]
        emb = embedded_repr(params, inputs, feats.ids)
        raw = raw_repr(feats, raw_types(feats, ms))
        matrices[ms] = {"raw": raw, "embedded": emb, "combined": combined_repr(emb, raw)}
    grids = {}
    for task in plan.tasks:
        spec = TASKS[task]
        grids[task] = load_grid(plan.grid, spec) if plan.grid else default_grid(spec)
    ws = Workspace(dataset, feats, matrices, dataset.ids_in("test"), grids)
    return ws, graph


def run_experiment(plan: ExperimentPlan, dataset, out_dir=None) -> ExperimentReport:
    """Run the full plan; ``dataset`` is a Dataset or a dataset directory."""
    plan.validate()
    if not isinstance(dataset, Dataset):
        dataset = load_dataset(dataset)
    n_train = len(dataset.ids_in("train"))
    if n_train == 0 or not dataset.ids_in("test"):
        raise PlanError("dataset needs both train and test episodes")
    sizes = plan.resolve_sizes(n_train)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "checkpoints").mkdir(exist_ok=True)
        _json_dump(out_dir / "plan.json", {"plan": plan.to_dict(), "sizes": [size_label(s) for s in sizes],
                                           "n_train": n_train, "n_episodes": len(dataset.episodes)})

    ws, graph = prepare_workspace(dataset, plan, out_dir)
    fp = plan.fingerprint()
    units = [(t, s, seed) for t in plan.tasks for s in sizes for seed in unit_seeds(plan, s)]
    results, pending = {}, []
    for key in units:
        ck = _checkpoint_path(out_dir, key)
        if ck is not None and ck.exists():
            obj = json.loads(ck.read_text())
            if obj.get("fingerprint") == fp:
                results[key] = obj["scores"]
                continue
        pending.append(key)

    test_reads = 0

    def done(key, scores, audit):
        nonlocal test_reads
        test_reads += sum(1 for phase, _, split, _ in audit if split == "test" and phase != "evaluation")
        results[key] = scores
        ck = _checkpoint_path(out_dir, key)
        if ck is not None:
            _json_dump(ck, {"fingerprint": fp, "task": key[0], "size": size_label(key[1]), "seed": key[2], "scores": scores})

    if plan.threads > 1 and len(pending) > 1 and "fork" in multiprocessing.get_all_start_methods():
        _POOL_STATE.update(ws=ws, plan=plan)
        try:
            with multiprocessing.get_context("fork").Pool(plan.threads) as pool:
                for key, (scores, audit) in pool.imap(_pool_unit, pending):
                    done(key, scores, audit)
        finally:
            _POOL_STATE.clear()
    else:
        for key in pending:
            scores, audit = run_unit(ws, plan, *key)
            done(key, scores, audit)

    values, seeds = {}, {}
    for task, size, seed in units:
        lab = size_label(size)
        if task == plan.tasks[0]:
            seeds.setdefault(lab, []).append(seed)
        for ms in plan.modality_sets:
            for f in plan.representations:
                values.setdefault((task, ms, f, lab), []).append(results[task, size, seed][ms][f])
    report = ExperimentReport(plan, sizes, n_train, len(dataset.episodes), values, seeds,
                              audit_test_reads_before_eval=test_reads)
    report.compute_significance()
    if out_dir is not None:
        report.write(out_dir)
        if "los" in plan.tasks and plan.analysis_size is not None and plan.analysis_size <= n_train:
            run_analysis(ws, plan, "los", plan.analysis_size, out_dir / "analysis")
    return report


def _checkpoint_path(out_dir, key) -> Path | None:
    if out_dir is None:
        return None
    task, size, seed = key
    return out_dir / "checkpoints" / f"{task}__{size_label(size)}__{seed}.json"


# --------------------------------------------------------------------------


def type_missing_counts(feats: FeaturizedDataset, type_ids: Sequence[str], rows: np.ndarray) -> np.ndarray:
    """Number of attribute types with no observed entry, per row."""
    absent = np.column_stack([feats.types[t].type_absent()[rows] for t in type_ids])
    return absent.sum(axis=1)


def run_analysis(ws: Workspace, plan: ExperimentPlan, task: str, size: int, out_dir) -> dict:
    """Missingness profile, per-attribute MAE deltas and contributions for one labeled subset."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ms = "all" if "all" in plan.modality_sets else plan.modality_sets[0]
    store = LabelStore(ws.dataset)
    ids = subset_for(ws.dataset, size, plan.seed)
    models, preds = {}, {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for flavor in FLAVORS:
            models[flavor], preds[flavor] = fit_and_predict(ws, store, task, flavor, ms, ids, plan.seed, plan.cv_folds)
    with store.evaluation():
        y_test = store.targets(task, ws.test_ids)
    errors = {f: np.abs(np.ravel(preds[f]) - y_test) for f in FLAVORS}

    rows = ws.matrices[ms]["raw"].row_index(ws.test_ids)
    types = embedding_types(ws.feats, ms)
    counts = type_missing_counts(ws.feats, types, rows)
    profile = analysis.missingness_error_profile(errors, counts, len(types))
    profile.write(out_dir / "missingness_profile.csv")

    names, observed = analysis.attribute_observed(ws.dataset, ws.test_ids)
    deltas = {f: analysis.feature_mae_delta(errors[f], observed, names) for f in FLAVORS}
    analysis.write_feature_deltas(deltas, out_dir / "feature_mae_delta.csv")

    type_flags = {t: ~ws.feats.types[t].type_absent()[rows] for t in ws.feats.types}
    type_flags[IDENTITY_TYPE] = np.ones(rows.size, dtype=bool)
    emb = ws.matrices[ms]["embedded"]
    contrib = analysis.feature_contribution(models["embedded"], emb, type_flags, rows=rows)
    contrib.write(out_dir / "feature_contribution.csv")
    return {"profile": profile, "deltas": deltas, "contribution": contrib}


def load_plan(path) -> ExperimentPlan:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PlanError(f"config is not valid JSON: {exc}") from None
    return ExperimentPlan.from_dict(obj)


def plan_with(plan: ExperimentPlan, **overrides) -> ExperimentPlan:
    kw = {k: v for k, v in overrides.items() if v is not None}
    return replace(plan, **kw)

