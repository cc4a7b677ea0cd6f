import csv
import json

import pytest

from rationale_cf.cli import EXIT_CONFIG, EXIT_DATASET, EXIT_NUMERIC, build_parser, main
from rationale_cf.exceptions import NonFiniteError
from rationale_cf.graph import write_tsv
from rationale_cf.synthetic import block_dataset
from rationale_cf.trainer import Trainer

FAST = ["--dim", "8", "--heads", "2", "--anchor-count", "8", "--batch-size", "64"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_tsv(block_dataset(n_users=40, n_items=40, n_blocks=4, n_interactions=400, seed=1), root / "data.tsv")
    assert main(["split", str(root / "data.tsv"), "--out", str(root / "split"), "--seed", "3"]) == 0
    return root


def last_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_ingest_writes_summary_and_manifest(workspace):
    out = workspace / "ingest"
    assert main(["ingest", str(workspace / "data.tsv"), "--out", str(out)]) == 0
    summary = json.loads((out / "ingest.json").read_text())
    assert summary["n_edges"] == 400
    assert (out / "interactions.tsv").is_file() and (out / "ingest.cfg").is_file()


def test_split_sidecar(workspace):
    sidecar = json.loads((workspace / "split" / "split.json").read_text())
    assert sidecar["seed"] == 3 and sidecar["counts"] == {"train": 280, "validation": 20, "test": 100}
    for name in ("train", "validation", "test"):
        assert (workspace / "split" / f"{name}.tsv").is_file()


def test_train_is_deterministic_and_flags_override_file(workspace):
    cfg = workspace / "c.cfg"
    cfg.write_text("max_epochs = 2\nseed = 1\n")
    runs = []
    for name in ("r1", "r2"):
        out = workspace / name
        assert main(["train", "--config", str(cfg), "--seed", "7", "--data", str(workspace / "split"),
                     "--out", str(out), *FAST]) == 0
        runs.append((out / "metrics.csv").read_bytes())
    assert runs[0] == runs[1]
    manifest = (workspace / "r1" / "train.cfg").read_text()
    assert "seed = 7" in manifest and "max_epochs = 2" in manifest
    rows = list(csv.reader((workspace / "r1" / "metrics.csv").open()))
    assert rows[0] == ["epoch", "l_rec", "l_mae", "l_rd", "l_cir", "l_reg", "total"] and len(rows) == 3
    report = json.loads((workspace / "r1" / "eval.json").read_text())
    assert set(report["recall"]) == {"10", "20", "40"}


def test_manifest_can_be_replayed(workspace):
    manifest = workspace / "r1" / "train.cfg"
    out = workspace / "replay"
    assert main(["train", "--config", str(manifest), "--out", str(out)]) == 0
    assert (out / "metrics.csv").read_bytes() == (workspace / "r1" / "metrics.csv").read_bytes()


def test_export_rationales_top_rows(workspace):
    out = workspace / "r1"
    assert main(["export-rationales", "--data", str(workspace / "split"), "--out", str(out), "--top", "100"]) == 0
    rows = list(csv.reader((out / "rationales.csv").open()))
    assert rows[0][:4] == ["user_id", "item_id", "score", "probability"]
    scores = [float(r[2]) for r in rows[1:]]
    assert len(scores) == 100 and scores == sorted(scores, reverse=True)


def test_eval_command(workspace, capsys):
    out = workspace / "r1"
    assert main(["eval", "--data", str(workspace / "split"), "--out", str(out), "--ks", "5,20"]) == 0
    assert json.loads((out / "eval.json").read_text())["ks"] == [5, 20]
    assert main(["eval", "--data", str(workspace / "split"), "--out", str(workspace / "pop"),
                 "--baseline", "popularity"]) == 0
    capsys.readouterr()


def test_sweep_curve_rows(workspace):
    out = workspace / "sweep"
    assert main(["sweep", "--perturb", "noise", "--levels", "0,0.1,0.2", "--data", str(workspace / "split"),
                 "--out", str(out), "--max-epochs", "1", *FAST]) == 0
    rows = list(csv.reader((out / "curve.csv").open()))
    assert rows[0] == ["level", "recall@20", "ndcg@20", "relative_degradation"]
    assert len(rows) == 4 and float(rows[1][3]) == 0.0


def test_missing_dataset_exit_code(workspace, capsys):
    assert main(["train", "--data", str(workspace / "nope"), "--out", str(workspace / "x")]) == EXIT_DATASET
    err = last_error(capsys)
    assert err["exit_code"] == EXIT_DATASET


def test_config_errors_exit_code(workspace, capsys):
    bad = workspace / "bad.cfg"
    bad.write_text("learning_rate = 1\n")
    assert main(["train", "--config", str(bad), "--data", str(workspace / "split"),
                 "--out", str(workspace / "x")]) == EXIT_CONFIG
    assert "learning_rate" in last_error(capsys)["message"]
    assert main(["train", "--data", str(workspace / "split"), "--out", str(workspace / "x"),
                 "--ablate", "everything"]) == EXIT_CONFIG
    assert main(["train", "--data", str(workspace / "split")]) == EXIT_CONFIG
    capsys.readouterr()


def test_numeric_failure_exit_code(workspace, capsys, monkeypatch):
    def boom(self):
        raise NonFiniteError("loss diverged")

    monkeypatch.setattr(Trainer, "train_epoch", boom)
    out = workspace / "diverged"
    code = main(["train", "--data", str(workspace / "split"), "--out", str(out), *FAST])
    assert code == EXIT_NUMERIC
    err = last_error(capsys)
    assert err["checkpoint"].endswith("checkpoint.zip") and (out / "checkpoint.zip").is_file()


def test_help_lists_ablations():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices["train"]
    assert "--ablate none|no_te|random_mask|mlp_mask|no_rd" in sub.format_help().replace("\n", " ").replace("  ", " ")


def test_defaults_printed_at_startup(workspace, capsys):
    main(["train", "--data", str(workspace / "split"), "--out", str(workspace / "r3"), "--max-epochs", "0", *FAST])
    err = capsys.readouterr().err
    assert "rho_r = 0.7" in err and "lambda2 = 0.01" in err
