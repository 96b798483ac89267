"""End-to-end command-line pipeline tests: exit codes, manifests, output
files, and rerun determinism. Commands run in process through cli.main."""

import json
import os

import numpy as np
import pytest

from ddikit.cli import main

TINY = {"d_model": 8, "n_layers": 1, "n_heads": 2, "d_ff": 8, "max_len": 32,
        "conv_blocks": 2, "kg_heads": 2, "mlp1_hidden": 8, "mlp1_out": 8,
        "mlp2_hidden": 8, "epochs": 1, "batch_size": 8, "learning_rate": 1e-3}


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    """Fixture dataset + vocab + kg table + splits, built once."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))

    def run(*argv):
        rc = main([str(a) for a in argv])
        assert rc == 0, f"command failed: {argv}"

    run("make-fixture", "--out-dir", root / "fix", "--seed", 7,
        "--set", "n_drugs=16", "--set", "n_events=60", "--set", "n_classes=3")
    run("vocab", "--corpus", root / "fix/corpus.txt", "--out-dir", root / "vocab",
        "--seed", 0)
    run("kg-train", "--triples", root / "fix/kg.tsv", "--out-dir", root / "kg",
        "--seed", 0, "--set", "dim=4", "--set", "epochs=3")
    run("split", "--drugs", root / "fix/drugs.tsv", "--events", root / "fix/events.tsv",
        "--labels", root / "fix/labels.txt", "--out-dir", root / "split",
        "--seed", 0, "--set", "test_drug_fraction=0.2")
    return root


def dataset_args(root):
    return ["--drugs", root / "fix/drugs.tsv", "--events", root / "fix/events.tsv",
            "--labels", root / "fix/labels.txt", "--splits", root / "split/splits.json",
            "--vocab", root / "vocab/vocab.txt", "--kg-table", root / "kg/kg_table.bin",
            "--kg-index", root / "kg/kg_table.index"]


def run(*argv):
    return main([str(a) for a in argv])


def test_every_run_writes_a_manifest(world):
    for sub in ("fix", "vocab", "kg", "split"):
        m = json.loads((world / sub / "manifest.json").read_text())
        assert m["seed"] in (0, 7)
        assert "config_fingerprint" in m
        assert "wall_clock_seconds" in m
        for path, digest in m["inputs"].items():
            assert len(digest) == 64
            assert os.path.exists(path)


def test_vocab_output_has_reserved_header(world):
    lines = (world / "vocab/vocab.txt").read_text().splitlines()
    assert lines[:4] == ["<pad>", "<unk>", "<mask>", "<sep>"]


def test_train_eval_roundtrip(world):
    rc = run("train", *dataset_args(world), "--out-dir", world / "run",
             "--seed", 0, "--config", world / "tiny.json")
    assert rc == 0
    assert (world / "run/model.ckpt").exists()
    hist = (world / "run/history.csv").read_text().splitlines()
    assert hist[0] == "epoch,train_loss,train_accuracy,eval_accuracy"
    assert len(hist) == 2  # 1 epoch

    rc = run("eval", "--checkpoint", world / "run/model.ckpt", "--split", "u1",
             *dataset_args(world), "--out-dir", world / "ev", "--seed", 0)
    assert rc == 0
    report = json.loads((world / "ev/metrics.json").read_text())
    assert 0.0 <= report["accuracy"] <= 1.0
    assert (world / "ev/roc.csv").exists()
    assert (world / "ev/pr.csv").exists()


def test_eval_is_deterministic(world):
    if not (world / "run/model.ckpt").exists():
        assert run("train", *dataset_args(world), "--out-dir", world / "run",
                   "--seed", 0, "--config", world / "tiny.json") == 0
    for d in ("ev_a", "ev_b"):
        assert run("eval", "--checkpoint", world / "run/model.ckpt", "--split",
                   "train", *dataset_args(world), "--out-dir", world / d,
                   "--seed", 0) == 0
    a = (world / "ev_a/metrics.json").read_bytes()
    b = (world / "ev_b/metrics.json").read_bytes()
    assert a == b


def test_seqlen_command(world):
    if not (world / "run/model.ckpt").exists():
        assert run("train", *dataset_args(world), "--out-dir", world / "run",
                   "--seed", 0, "--config", world / "tiny.json") == 0
    rc = run("seqlen", "--checkpoint", world / "run/model.ckpt", "--split",
             "train", *dataset_args(world), "--out-dir", world / "sl",
             "--seed", 0, "--set", "bin_width=8")
    assert rc == 0
    lines = (world / "sl/seqlen.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,mean_accuracy,count"
    assert len(lines) > 1


def test_pretrain_command(world):
    rc = run("pretrain", "--corpus", world / "fix/corpus.txt", "--vocab",
             world / "vocab/vocab.txt", "--out-dir", world / "pre",
             "--seed", 0, "--config", world / "tiny.json")
    assert rc == 0
    assert (world / "pre/pretrained.ckpt").exists()
    loss = (world / "pre/pretrain_loss.csv").read_text().splitlines()
    assert loss[0] == "epoch,loss"


def test_kg_export_command(world):
    rc = run("kg-export", "--table", world / "kg/kg_table.bin", "--index",
             world / "kg/kg_table.index", "--drugs", world / "fix/drugs.tsv",
             "--out-dir", world / "kx", "--seed", 0)
    assert rc == 0
    lines = (world / "kx/drug_vectors.tsv").read_text().splitlines()
    assert len(lines) == 16
    assert len(lines[0].split("\t")[1].split()) == 4


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------

def test_unknown_config_key_exits_2(world, capsys):
    rc = run("vocab", "--corpus", world / "fix/corpus.txt",
             "--out-dir", world / "x", "--seed", 0, "--set", "bogus_key=1")
    assert rc == 2
    assert "ddikit:error:config" in capsys.readouterr().err


def test_bad_config_file_exits_2(world, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("not json")
    rc = run("vocab", "--corpus", world / "fix/corpus.txt",
             "--out-dir", world / "x", "--config", bad)
    assert rc == 2
    assert "ddikit:error:config" in capsys.readouterr().err


def test_missing_input_exits_3(tmp_path, capsys):
    rc = run("vocab", "--corpus", tmp_path / "nope.txt", "--out-dir", tmp_path / "o")
    assert rc == 3
    assert "ddikit:error:data" in capsys.readouterr().err


def test_malformed_data_exits_3(tmp_path, capsys):
    bad = tmp_path / "drugs.tsv"
    bad.write_text("D1\tC(C\n")
    ev = tmp_path / "e.tsv"
    ev.write_text("D1\tD1\tx\n")
    lab = tmp_path / "l.txt"
    lab.write_text("x\n")
    rc = run("split", "--drugs", bad, "--events", ev, "--labels", lab,
             "--out-dir", tmp_path / "o")
    assert rc == 3
    assert "ddikit:error:data" in capsys.readouterr().err
