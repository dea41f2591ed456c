"""Command-line interface: ``epmd <subcommand>``.

Exit codes: 0 ok, 2 validation error, 3 runtime failure.
"""

from __future__ import annotations

import json
import logging
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import click
import numpy as np

from . import harness
from .dataset import TASKS, load_dataset, save_dataset
from .errors import EpmdError, ValidationError
from .featurize import FeaturizedDataset, featurize_dataset
from .graph import AffinityGraph, graph_from_dataset
from .linear import cv_select, default_grid, fit_model, load_grid, load_model, predict, save_model
from .model import EncoderParams, train, write_embeddings
from .representations import (
    FLAVORS,
    MODALITY_SETS,
    RepresentationMatrix,
    combined_repr,
    embedded_repr,
    encoder_inputs,
    raw_repr,
    raw_types,
)
from .skipgram import WordVectors
from .synthetic import SyntheticConfig, generate_synthetic

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class Context:
    def __init__(self, seed, out, threads, config):
        self.seed = seed
        self.out = Path(out)
        self.threads = threads
        self.config = config

    def plan(self) -> harness.ExperimentPlan:
        plan = harness.load_plan(self.config) if self.config else harness.ExperimentPlan()
        return harness.plan_with(plan, seed=self.seed, threads=self.threads)


@click.group()
@click.option("--seed", type=int, default=None, help="Master seed (overrides the config).")
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True, help="Output directory.")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker processes for downstream fits.")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None, help="Plan JSON; any field may be set.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, seed, out, threads, config, verbose):
    """EP-md benchmark: embeddings with missing-data representations for ICU episodes."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = Context(seed, out, threads, config)


@cli.command()
@click.option("--n-episodes", type=int, default=1000, show_default=True)
@click.option("--clusters", type=int, default=4, show_default=True)
@click.option("--missing", type=float, default=0.4, show_default=True, help="Type-level missing rate.")
@click.option("--test-fraction", type=float, default=0.2, show_default=True)
@click.pass_obj
def synth(obj, n_episodes, clusters, missing, test_fraction):
    """Write a synthetic dataset with planted cluster structure."""
    cfg = SyntheticConfig(
        n_episodes=n_episodes,
        n_clusters=clusters,
        test_fraction=test_fraction,
        series_missing=missing,
        notes_missing=missing,
        categorical_missing=missing,
    )
    ds = generate_synthetic(cfg, obj.seed or 0)
    save_dataset(ds, obj.out)
    click.echo(f"wrote {len(ds.episodes)} episodes to {obj.out}")


@cli.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--min-df", type=float, default=0.001, show_default=True)
@click.option("--max-df", type=float, default=0.90, show_default=True)
@click.pass_obj
def featurize(obj, dataset_dir, min_df, max_df):
    """Per-type feature matrices and masks."""
    feats = featurize_dataset(load_dataset(dataset_dir), min_df, max_df)
    feats.save(obj.out)
    click.echo(", ".join(f"{t}: {fm.dim}" for t, fm in feats.types.items()))


@cli.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--threshold", type=float, default=0.9, show_default=True)
@click.option("--external-vectors", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Pretrained word vectors ('N d' text format) instead of training skipgram.")
@click.pass_obj
def graph(obj, dataset_dir, threshold, external_vectors):
    """Affinity graph from admission text."""
    ds = load_dataset(dataset_dir)
    plan = obj.plan()
    wv = WordVectors.load(external_vectors) if external_vectors else None
    g, wv, _ = graph_from_dataset(ds, plan.skipgram, threshold, wv)
    obj.out.mkdir(parents=True, exist_ok=True)
    g.write(obj.out / "graph.edges")
    wv.save(obj.out / "vectors.txt")
    isolated = int((g.degree() == 0).sum())
    click.echo(f"{len(g)} nodes, {g.n_edges} edges, {isolated} isolated")


@cli.command("train-emb")
@click.argument("features_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("graph_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--modality-set", type=click.Choice(MODALITY_SETS), default="all", show_default=True)
@click.option("--iters", type=int, default=None, help="Epochs over the nodes.")
@click.option("--batch", type=int, default=None)
@click.option("--dim", type=int, default=None)
@click.option("--margin", type=float, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--self-loops", is_flag=True, default=None)
@click.pass_obj
def train_emb(obj, features_dir, graph_file, modality_set, iters, batch, dim, margin, lr, self_loops):
    """Train EP-md encoders."""
    plan = obj.plan()
    overrides = dict(iterations=iters, batch_size=batch, dim=dim, margin=margin, learning_rate=lr,
                     self_loops=self_loops, seed=obj.seed)
    cfg = replace(plan.train, **{k: v for k, v in overrides.items() if v is not None})
    feats = FeaturizedDataset.load(features_dir)
    g = AffinityGraph.read(graph_file, feats.ids)
    inputs = encoder_inputs(feats, modality_set)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = train(inputs, g, cfg)
    for w in caught:
        click.echo(f"warning: {w.message}", err=True)
    obj.out.mkdir(parents=True, exist_ok=True)
    result.params.save(obj.out / "params.bin")
    write_embeddings(result.params, inputs, feats.ids, obj.out)
    with open(obj.out / "loss_trace.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_loss\n")
        for k, v in enumerate(result.loss_trace):
            fh.write(f"{k},{v!r}\n")
    click.echo(f"skipped {result.n_skipped}/{result.n_nodes} nodes ({100 * result.skipped_fraction:.1f}%)")


@cli.command()
@click.argument("features_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--flavor", type=click.Choice(FLAVORS), default="combined", show_default=True)
@click.option("--modality-set", type=click.Choice(MODALITY_SETS), default="all", show_default=True)
@click.option("--params", "params_file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_obj
def represent(obj, features_dir, flavor, modality_set, params_file):
    """Write repr_<flavor>.csv with column provenance."""
    feats = FeaturizedDataset.load(features_dir)
    if flavor != "raw" and params_file is None:
        raise click.UsageError("--params is required for embedded and combined representations")
    raw = raw_repr(feats, raw_types(feats, modality_set))
    if flavor == "raw":
        mat = raw
    else:
        params = EncoderParams.load(params_file)
        inputs = encoder_inputs(feats, modality_set)
        if [t.type_id for t in inputs] != params.type_ids:
            raise ValidationError("parameter file was trained on a different modality set")
        emb = embedded_repr(params, inputs, feats.ids)
        mat = emb if flavor == "embedded" else combined_repr(emb, raw)
    obj.out.mkdir(parents=True, exist_ok=True)
    path = obj.out / f"repr_{flavor}.csv"
    mat.write(path)
    click.echo(f"{path}: {len(mat.ids)} x {mat.dim}")


@cli.command()
@click.argument("repr_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--task", type=click.Choice(sorted(TASKS)), required=True)
@click.option("--size", default="all", show_default=True, help="Labeled subset size or 'all'.")
@click.option("--grid", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--folds", type=int, default=3, show_default=True)
@click.pass_obj
def fit(obj, repr_file, dataset_dir, task, size, grid, folds):
    """Cross-validate and fit a linear model on a labeled training subset."""
    ds = load_dataset(dataset_dir)
    mat = RepresentationMatrix.read(repr_file)
    size = "all" if size == "all" else _int_size(size)
    seed = obj.seed or 0
    ids = harness.subset_for(ds, size, seed)
    store = harness.LabelStore(ds)
    y = store.targets(task, ids)
    X = mat.values[mat.row_index(ids)]
    spec = TASKS[task]
    cv = cv_select(X, y, spec, load_grid(grid, spec) if grid else default_grid(spec), k=folds, seed=seed)
    model = fit_model(X, y, spec, cv.best)
    obj.out.mkdir(parents=True, exist_ok=True)
    save_model(model, obj.out / "model.json")
    with open(obj.out / "cv.json", "w", encoding="utf-8") as fh:
        json.dump({"best": asdict(cv.best), "scores": cv.scores, "n_labeled": len(ids), "seed": seed}, fh, indent=1)
    click.echo(f"best {cv.best} (cv score {max(cv.scores):.4f})")


@cli.command("eval")
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("repr_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--task", type=click.Choice(sorted(TASKS)), required=True)
@click.pass_obj
def evaluate(obj, model_file, repr_file, dataset_dir, task):
    """Score a fitted model on the test split."""
    ds = load_dataset(dataset_dir)
    mat = RepresentationMatrix.read(repr_file)
    model = load_model(model_file)
    test = ds.ids_in("test")
    preds = predict(model, mat.values[mat.row_index(test)])
    store = harness.LabelStore(ds)
    with store.evaluation():
        y = store.targets(task, test)
    value = harness.score_predictions(task, preds, y)
    obj.out.mkdir(parents=True, exist_ok=True)
    metric = harness.METRIC_NAMES[task]
    with open(obj.out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump({"task": task, "metric": metric, "value": value, "n_test": len(test)}, fh, indent=1)
    click.echo(f"{task} {metric}: {value:.4f}")


@cli.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--task", type=click.Choice(["los"]), default="los", show_default=True)
@click.option("--size", type=int, default=None, help="Labeled subset size (default: the plan's analysis_size).")
@click.pass_obj
def analyze(obj, dataset_dir, task, size):
    """Missingness profile, per-attribute MAE deltas and contributions."""
    plan = obj.plan()
    ds = load_dataset(dataset_dir)
    size = size or plan.analysis_size or 100
    n_train = len(ds.ids_in("train"))
    if size > n_train:
        raise ValidationError(f"subset size {size} exceeds the {n_train} training episodes")
    ws, _ = harness.prepare_workspace(ds, plan, obj.out)
    harness.run_analysis(ws, plan, task, size, obj.out / "analysis")
    click.echo(f"wrote {obj.out / 'analysis'}")


@cli.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--tasks", default=None, help="Comma-separated tasks.")
@click.option("--sizes", default=None, help="Comma-separated sizes, 'all' allowed.")
@click.option("--repeats", type=int, default=None)
@click.option("--modality-sets", default=None)
@click.pass_obj
def bench(obj, dataset_dir, tasks, sizes, repeats, modality_sets):
    """Run the full plan and write the report."""
    plan = obj.plan()
    plan = harness.plan_with(
        plan,
        tasks=tuple(tasks.split(",")) if tasks else None,
        sizes=tuple("all" if s == "all" else _int_size(s) for s in sizes.split(",")) if sizes else None,
        repeats=repeats,
        modality_sets=tuple(modality_sets.split(",")) if modality_sets else None,
    )
    report = harness.run_experiment(plan, dataset_dir, obj.out)
    click.echo(report.render_tables())


@cli.command()
@click.argument("bench_dir", type=click.Path(exists=True, file_okay=False))
@click.pass_obj
def report(obj, bench_dir):
    """Re-render report files from a bench directory's results."""
    rep = harness.ExperimentReport.from_results(bench_dir)
    rep.write(obj.out)
    click.echo(rep.render_tables())


def _int_size(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"subset size must be an integer or 'all', got {text!r}") from None


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return EXIT_VALIDATION
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_VALIDATION
    except (EpmdError, np.linalg.LinAlgError) as exc:
        click.echo(f"failed: {exc}", err=True)
        return EXIT_RUNTIME
    except OSError as exc:
        click.echo(f"failed: {exc}", err=True)
        return EXIT_RUNTIME
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
