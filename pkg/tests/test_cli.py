import json

import pytest

from epmd.cli import main
from epmd.dataset import load_dataset


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    d = str(root / "data")
    assert main(["--seed", "1", "--out", d, "synth", "--n-episodes", "60"]) == 0
    assert main(["--out", str(root / "feats"), "featurize", d]) == 0
    assert main(["--out", str(root / "graph"), "graph", d]) == 0
    return root


def test_synth_writes_dataset(pipeline):
    ds = load_dataset(pipeline / "data")
    assert len(ds.episodes) == 60 and ds.ids_in("test")


def test_graph_files(pipeline):
    assert (pipeline / "graph" / "graph.edges").exists()
    assert (pipeline / "graph" / "vectors.txt").exists()


def test_train_represent_fit_eval(pipeline, tiny_grid):
    r = pipeline
    emb = str(r / "emb")
    assert main(["--seed", "2", "--out", emb, "train-emb", str(r / "feats"), str(r / "graph" / "graph.edges"),
                 "--iters", "2", "--dim", "4", "--batch", "16"]) == 0
    assert (r / "emb" / "params.bin").exists() and (r / "emb" / "loss_trace.csv").exists()
    assert list((r / "emb").glob("embeddings_*.csv"))
    rep = str(r / "rep")
    assert main(["--out", rep, "represent", str(r / "feats"), "--flavor", "combined",
                 "--params", str(r / "emb" / "params.bin")]) == 0
    assert main(["--out", rep, "represent", str(r / "feats"), "--flavor", "raw"]) == 0
    repr_file = str(r / "rep" / "repr_combined.csv")
    assert main(["--out", str(r / "fit"), "fit", repr_file, str(r / "data"), "--task", "mort",
                 "--size", "20", "--grid", tiny_grid]) == 0
    cv = json.loads((r / "fit" / "cv.json").read_text())
    assert cv["n_labeled"] == 20 and len(cv["scores"]) == 2
    assert main(["--out", str(r / "eval"), "eval", str(r / "fit" / "model.json"), repr_file, str(r / "data"),
                 "--task", "mort"]) == 0
    metrics = json.loads((r / "eval" / "metrics.json").read_text())
    assert metrics["metric"] == "AuROC" and 0.0 <= metrics["value"] <= 1.0


def test_validation_errors_exit_2(pipeline, tmp_path):
    r = pipeline
    assert main(["--out", str(tmp_path / "x"), "fit", str(tmp_path / "missing.csv"), str(r / "data"),
                 "--task", "mort"]) == 2
    # raw matrix needs no params, the others do
    assert main(["--out", str(tmp_path / "x"), "represent", str(r / "feats"), "--flavor", "embedded"]) == 2
    assert main(["--out", str(tmp_path / "x"), "bench", str(r / "data"), "--sizes", "100000"]) == 2
    assert main(["--out", str(tmp_path / "x"), "bench", str(r / "data"), "--sizes", "ten"]) == 2
    assert main(["--out", str(tmp_path / "x"), "nosuchcommand"]) == 2


def test_unwritable_output_exits_3(pipeline, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["--out", str(blocker / "sub"), "represent", str(pipeline / "feats"), "--flavor", "raw"]) == 3


def test_bench_and_report(pipeline, tiny_grid, tmp_path):
    cfg = tmp_path / "plan.json"
    cfg.write_text(json.dumps({"train": {"iterations": 2, "dim": 4}, "skipgram": {"dim": 8, "epochs": 1},
                               "grid": tiny_grid, "analysis_size": 20}))
    out = tmp_path / "bench"
    args = ["--config", str(cfg), "--out", str(out), "bench", str(pipeline / "data"),
            "--tasks", "los", "--sizes", "10,all", "--repeats", "2", "--modality-sets", "all"]
    assert main(args) == 0
    assert (out / "report.md").exists() and (out / "analysis" / "missingness_profile.csv").exists()
    again = tmp_path / "again"
    assert main(["--out", str(again), "report", str(out)]) == 0
    assert (again / "report.md").read_text() == (out / "report.md").read_text()
