"""Benchmark-scale runs on the synthetic dataset. Run with `pytest -m slow`."""
import numpy as np
import pytest

from tabemb.cache import EmbeddingCache
from tabemb.colgraph import build_graph_pool
from tabemb.config import BackendConfig, SweepConfig, SynthConfig, TrainConfig, Variant
from tabemb.embedding import make_backend
from tabemb.analysis import run_ablation_sweep
from tabemb.pipeline import evaluate, train
from tabemb.synth import generate_synthetic
from tabemb.tables import Task

from scripts.cli import main

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def benchmark():
    dataset = generate_synthetic(SynthConfig(n_train=300, n_valid=50, n_test=100, ambiguity=0.5, seed=0))
    backend = make_backend(BackendConfig(dim=64))
    cache = EmbeddingCache()
    pools = {split: build_graph_pool(dataset.split(split), backend, 10, 0, cache, None, dataset.label_spaces)
             for split in ("train", "valid", "test")}
    return dataset, pools


@pytest.fixture(scope="module")
def default_pools(benchmark):
    dataset, _ = benchmark
    config = TrainConfig()
    backend = make_backend(BackendConfig())
    cache = EmbeddingCache()
    return {split: build_graph_pool(dataset.split(split), backend, config.m, config.seed, cache, None,
                                    dataset.label_spaces)
            for split in ("train", "valid")}


def _cta_f1(benchmark, variant):
    dataset, pools = benchmark
    config = TrainConfig(task=Task.CTA, variant=variant, epochs=80, batch_size=32, hidden=64, heads=4, m=10)
    model = train(dataset, config, pools["train"], pools["valid"])
    return evaluate(model, pools["test"]).report.micro_f1


def test_structure_beats_no_message_passing(benchmark):
    scores = {v: _cta_f1(benchmark, v) for v in (Variant.NONE, Variant.GAT, Variant.GCN, Variant.GGNN)}
    assert scores[Variant.GAT] - scores[Variant.NONE] >= 0.10, scores
    assert scores[Variant.GCN] - scores[Variant.NONE] >= 0.05, scores
    assert scores[Variant.GGNN] - scores[Variant.NONE] >= 0.05, scores


def test_default_model_fits_training_set(benchmark, default_pools):
    dataset, _ = benchmark
    pools = default_pools
    config = TrainConfig(task=Task.CTA)
    model = train(dataset, config, pools["train"], pools["valid"])
    assert evaluate(model, pools["train"]).report.micro_f1 >= 0.95
    history = model.history
    scores = [r.valid_f1 for r in history.records]
    assert history.selected_epoch == int(np.argmax(scores)) + 1
    assert model.param_hash() == history.records[history.selected_epoch - 1].param_hash


def test_depth_and_sampling_sweep():
    dataset = generate_synthetic(SynthConfig(n_train=60, n_valid=10, n_test=20, seed=4))
    backend = make_backend(BackendConfig(dim=32))
    cache = EmbeddingCache()

    def pools(m):
        return tuple(build_graph_pool(dataset.split(s), backend, m, 0, cache, None, dataset.label_spaces)
                     for s in ("train", "valid", "test"))

    base = TrainConfig(task=Task.CTA, epochs=3, batch_size=16, hidden=16, heads=4, m=25)
    sweep = SweepConfig(axes=["depth", "m"], depths=[1, 2, 3, 4], ms=[5, 15, 25], tasks=[Task.CTA])
    grid = run_ablation_sweep(dataset, base, sweep, pools)
    assert len(grid) == 7
    assert (grid["status"] == "ok").all()
    assert np.isfinite(grid["micro_f1_cta"]).all()


def _end_to_end(root, monkeypatch):
    root.mkdir()
    monkeypatch.chdir(root)
    embed = ["--dataset", "data", "--cache-dir", "cache", "--dim", "32", "--m", "8"]
    assert main(["synth", "--out", "data", "--n-train", "40", "--n-valid", "10", "--n-test", "10"]) == 0
    assert main(["embed", *embed]) == 0
    assert main(["train", *embed, "--epochs", "3", "--batch-size", "16", "--hidden", "16",
                 "--checkpoint", "model.ckpt"]) == 0
    assert main(["predict", "--checkpoint", "model.ckpt", "--input", "data/test.jsonl", "--out", "preds.jsonl",
                 "--cache-dir", "cache"]) == 0
    return (root / "model.ckpt").read_bytes(), (root / "preds.jsonl").read_bytes()


def test_end_to_end_runs_are_byte_identical(tmp_path, monkeypatch):
    first = _end_to_end(tmp_path / "one", monkeypatch)
    second = _end_to_end(tmp_path / "two", monkeypatch)
    assert first == second
