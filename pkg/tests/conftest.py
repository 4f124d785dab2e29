from __future__ import annotations

import numpy as np
import pytest

from tabemb.cache import EmbeddingCache
from tabemb.colgraph import build_graph_pool
from tabemb.config import BackendConfig, SynthConfig, TrainConfig
from tabemb.embedding import make_backend
from tabemb.synth import generate_synthetic
from tabemb.tables import AnnotatedTable, Dataset, LabelSpace, Table, Task, write_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def backend():
    return make_backend(BackendConfig(kind="local", dim=32))


@pytest.fixture
def tiny_dataset() -> Dataset:
    """Two hand-written tables with CTA, CPA and TTA labels."""
    spaces = {
        Task.CTA: LabelSpace(Task.CTA, ("city", "person", "year")),
        Task.CPA: LabelSpace(Task.CPA, ("born_in", "lives_in")),
        Task.TTA: LabelSpace(Task.TTA, ("people", "places")),
    }
    t1 = AnnotatedTable(
        Table.from_cells("t1", [["Ada Lovelace", "Alan Turing", "Grace Hopper"],
                                ["London", "Wilmslow", None],
                                ["1815", "1912", "1906"]]),
        cta=("person", "city", "year"), cpa=((0, 1, "lives_in"),), tta="people")
    t2 = AnnotatedTable(
        Table.from_cells("t2", [["Paris", "Berlin"], ["Marie", "Albert"]]),
        cta=("city", None), cpa=((1, 0, "born_in"),), tta="places")
    return Dataset((t1, t2), (t1,), (t2,), spaces)


@pytest.fixture(scope="session")
def small_synth() -> Dataset:
    return generate_synthetic(SynthConfig(n_train=24, n_valid=8, n_test=8, seed=3))


@pytest.fixture(scope="session")
def small_pools(small_synth):
    backend = make_backend(BackendConfig(kind="local", dim=32))
    cache = EmbeddingCache()
    return {
        split: build_graph_pool(small_synth.split(split), backend, 10, 0, cache, None, small_synth.label_spaces,
                                meta={"split": split})
        for split in ("train", "valid", "test")
    }


@pytest.fixture
def small_config() -> TrainConfig:
    return TrainConfig(task=Task.CTA, epochs=3, batch_size=8, hidden=16, heads=4, layers=2, m=10, seed=0)


@pytest.fixture
def dataset_dir(tmp_path, small_synth):
    return write_dataset(small_synth, tmp_path / "data")
