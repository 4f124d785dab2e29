import json
import logging

import pandas as pd
import pytest

from scripts.cli import main

EMBED = ["--dataset", "data", "--cache-dir", "cache", "--dim", "16", "--m", "5"]
SMALL = ["--epochs", "2", "--batch-size", "8", "--hidden", "8", "--heads", "2", "--layers", "1"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["synth", "--out", "data", "--n-train", "12", "--n-valid", "4", "--n-test", "4", "--seed", "1"]) == 0
    return tmp_path


@pytest.fixture
def trained(workdir):
    assert main(["embed", *EMBED]) == 0
    assert main(["train", *EMBED, *SMALL, "--checkpoint", "model.ckpt", "--report-dir", "reports"]) == 0
    return workdir


def test_synth_writes_dataset(workdir):
    assert {p.name for p in (workdir / "data").iterdir()} >= {"train.jsonl", "valid.jsonl", "test.jsonl",
                                                             "labels_cta.txt", "labels_cpa.txt", "labels_tta.txt"}


def test_embed_twice_reuses_pools(workdir, caplog):
    caplog.set_level(logging.INFO)
    assert main(["embed", *EMBED]) == 0
    pools = sorted(p.name for p in (workdir / "cache" / "pools").glob("*.pool"))
    assert len(pools) == 3
    caplog.clear()
    assert main(["embed", *EMBED]) == 0
    assert "cache hit, 0 embeddings computed" in caplog.text
    assert sorted(p.name for p in (workdir / "cache" / "pools").glob("*.pool")) == pools


def test_train_writes_checkpoint_and_log(trained):
    assert (trained / "model.ckpt").exists()
    log = (trained / "reports" / "train-cta.csv").read_text(encoding="utf-8").splitlines()
    assert log[0].startswith("epoch,loss,valid_f1")
    assert len(log) == 3


def test_eval_from_checkpoint(trained, capsys):
    assert main(["eval", *EMBED, "--checkpoint", "model.ckpt", "--report-dir", "reports"]) == 0
    assert "micro-F1 (cta, test)" in capsys.readouterr().out
    assert (trained / "reports" / "eval-cta-test.csv").exists()
    assert (trained / "reports" / "strata-cta-test.csv").exists()
    manifest = json.loads((trained / "reports" / "manifest.json").read_text(encoding="utf-8"))
    assert {"train-cta", "eval-cta-test"} <= set(manifest)


def test_predict_then_score_predictions(trained, capsys):
    assert main(["predict", "--checkpoint", "model.ckpt", "--input", "jsonl:data/test.jsonl", "--out", "preds.jsonl",
                 "--cache-dir", "cache", "--logits", "logits.jsonl"]) == 0
    records = [json.loads(l) for l in (trained / "preds.jsonl").read_text(encoding="utf-8").splitlines()]
    assert len(records) == 4
    assert all(set(r) == {"table_id", "cta"} for r in records)
    assert main(["eval", "--dataset", "data", "--predictions", "preds.jsonl", "--task", "cta",
                 "--report-dir", "reports"]) == 0
    assert "micro-F1" in capsys.readouterr().out


def test_heatmap_and_export(trained):
    assert main(["heatmap", *EMBED, "--checkpoint", "model.ckpt", "--report-dir", "reports"]) == 0
    assert (trained / "reports" / "heatmap-test.csv").exists()
    assert main(["export", *EMBED, "--checkpoint", "model.ckpt", "--out", "emb.tsv"]) == 0
    header = (trained / "emb.tsv").read_text(encoding="utf-8").splitlines()[0]
    assert header.split("\t") == ["table_id", "column", "stage", "label", "vector"]


def test_summary(workdir, capsys):
    assert main(["summary", "--dataset", "data", "--report-dir", "reports"]) == 0
    assert "cta" in capsys.readouterr().out


class TestExitCodes:
    def test_train_before_embed(self, workdir):
        assert main(["train", *EMBED, *SMALL]) == 2

    def test_missing_dataset(self, workdir):
        assert main(["summary", "--dataset", "nowhere"]) == 2

    def test_invalid_setting(self, workdir):
        assert main(["train", *EMBED, "--epochs", "0"]) == 2

    def test_missing_checkpoint(self, workdir):
        assert main(["eval", *EMBED, "--checkpoint", "absent.ckpt"]) == 2

    def test_changed_settings_do_not_match_pools(self, trained):
        assert main(["train", "--dataset", "data", "--cache-dir", "cache", "--dim", "16", "--m", "7", *SMALL]) == 2

    def test_unknown_checkpoint_version(self, trained):
        blob = bytearray((trained / "model.ckpt").read_bytes())
        blob[8:10] = (99).to_bytes(2, "little")
        (trained / "future.ckpt").write_bytes(bytes(blob))
        assert main(["eval", *EMBED, "--checkpoint", "future.ckpt"]) == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as e:
            main(["fly"])
        assert e.value.code == 2


def test_synth_with_ambiguity_and_seed(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["synth", "--out", "bench", "--ambiguity", "0.5", "--seed", "7",
                 "--n-train", "6", "--n-valid", "2", "--n-test", "2"]) == 0
    names = {p.name for p in (tmp_path / "bench").iterdir()}
    assert {n for n in names if n.startswith("labels_")} == {"labels_cta.txt", "labels_cpa.txt", "labels_tta.txt"}
    assert {n for n in names if n.endswith(".jsonl")} == {"train.jsonl", "valid.jsonl", "test.jsonl"}


def test_predict_listed_pairs(trained):
    assert main(["train", *EMBED, *SMALL, "--task", "cpa", "--checkpoint", "cpa.ckpt"]) == 0
    (trained / "pairs.jsonl").write_text(json.dumps({"table_id": "test-00000", "pairs": [[0, 1], [1, 0]]}) + "\n",
                                         encoding="utf-8")
    assert main(["predict", "--checkpoint", "cpa.ckpt", "--input", "jsonl:data/test.jsonl", "--out", "cpa.jsonl",
                 "--cache-dir", "cache", "--pairs", "pairs.jsonl"]) == 0
    records = {r["table_id"]: r for r in map(json.loads, (trained / "cpa.jsonl").read_text(encoding="utf-8").splitlines())}
    listed = records["test-00000"]["cpa"]
    assert [(i, j) for i, j, _ in listed] == [(0, 1), (1, 0)]
    labels = (trained / "data" / "labels_cpa.txt").read_text(encoding="utf-8").splitlines()
    assert all(label in labels for _, _, label in listed)


class TestSweep:
    def test_variant_axis(self, workdir):
        assert main(["sweep", *EMBED, *SMALL, "--axes", "variant", "--tasks", "cta"]) == 0
        grid = pd.read_csv(workdir / "reports" / "sweep.csv", keep_default_na=False)
        assert len(grid) == 4
        assert grid["value"].tolist() == ["none", "gat", "gcn", "ggnn"]
        manifest = json.loads((workdir / "reports" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["sweep"]["meta"]["scored_on"] == "test"

    def test_without_test_split_names_scored_pool(self, tmp_path, monkeypatch, caplog):
        caplog.set_level(logging.WARNING)
        monkeypatch.chdir(tmp_path)
        assert main(["synth", "--out", "data", "--n-train", "12", "--n-valid", "4", "--n-test", "0"]) == 0
        assert main(["sweep", *EMBED, *SMALL, "--axes", "variant", "--tasks", "cta"]) == 0
        manifest = json.loads((tmp_path / "reports" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["sweep"]["meta"]["scored_on"] == "valid"
        assert "scored on the valid pool" in caplog.text
