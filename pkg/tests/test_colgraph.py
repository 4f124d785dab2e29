import numpy as np
import pytest

from tabemb.colgraph import (GraphIndex, batch_graphs, block_partition, build_graph_pool, construct_graph,
                             load_pool, permute_graph, save_pool)
from tabemb.embedding import ColumnEmbedding
from tabemb.errors import ArgumentError, PoolMismatchError, StructuralError
from tabemb.tables import Table, Task

from oracles import random_graph


def _table(n: int) -> Table:
    return Table.from_cells("t", [[str(i)] for i in range(n)])


def _psi(n: int, d: int = 4):
    return [ColumnEmbedding(np.full(d, float(i))) for i in range(n)]


class TestBlockPartition:
    @pytest.mark.parametrize("n,size,expected", [
        (31, 15, [11, 10, 10]),
        (7, 3, [3, 2, 2]),
        (4, 10, [4]),
        (6, 3, [3, 3]),
    ])
    def test_sizes(self, n, size, expected):
        blocks = block_partition(n, size)
        assert [len(b) for b in blocks] == expected
        assert [i for b in blocks for i in b] == list(range(n))

    def test_rejects_block_size_below_two(self):
        with pytest.raises(ArgumentError):
            block_partition(5, 1)


class TestConstructGraph:
    def test_complete_graph_with_self_loops(self):
        g = construct_graph(_table(4), _psi(4))
        assert len(g.edges) == 16
        assert {(v, v) for v in range(4)} <= {tuple(e) for e in g.edges}

    def test_single_column_has_one_self_loop(self):
        g = construct_graph(_table(1), _psi(1))
        assert g.edges.tolist() == [[0, 0]]

    def test_blocked_graph_only_links_within_blocks(self):
        g = construct_graph(_table(7), _psi(7), block_size=3)
        assert len(g.edges) == 9 + 4 + 4
        blocks = {v: b for b, r in enumerate(block_partition(7, 3)) for v in r}
        assert all(blocks[s] == blocks[t] for s, t in g.edges)

    def test_embedding_count_mismatch(self):
        with pytest.raises(ArgumentError):
            construct_graph(_table(3), _psi(2))

    def test_embedding_width_mismatch(self):
        psi = _psi(2) + [ColumnEmbedding(np.zeros(5))]
        with pytest.raises(ArgumentError, match="width"):
            construct_graph(_table(3), psi)


class TestGraphIndex:
    def test_slots_enumerate_in_edges(self):
        idx = GraphIndex.from_edges(3, np.array([[0, 1], [2, 1], [1, 1], [0, 0], [2, 2]]))
        assert idx.in_degree.tolist() == [1, 3, 1]
        assert idx.n_slots == 3
        assert sorted(idx.slot[idx.dst == 1].tolist()) == [0, 1, 2]

    def test_node_without_in_edges_is_structural_error(self):
        idx = GraphIndex.from_edges(2, np.array([[0, 0]]))
        with pytest.raises(StructuralError):
            idx.require_in_edges()


def test_permute_graph_moves_features_and_edges(rng):
    g = random_graph(rng, 4, 3)
    perm = np.array([2, 0, 3, 1])
    p = permute_graph(g, perm)
    np.testing.assert_array_equal(p.features[perm], g.features)
    assert sorted(map(tuple, p.edges.tolist())) == sorted((perm[s], perm[t]) for s, t in g.edges)


def test_batch_offsets_and_pooling(rng):
    graphs = [random_graph(rng, n, 3) for n in (2, 3, 1)]
    batch = batch_graphs(graphs)
    assert batch.n == 6
    assert batch.offsets.tolist() == [0, 2, 5]
    assert batch.pooling.segment.tolist() == [0, 0, 1, 1, 1, 2]
    assert len(batch.index.src) == 4 + 9 + 1
    assert set(batch.index.src[batch.index.dst == 5].tolist()) == {5}


class TestGraphPool:
    def test_labels_become_ordinals(self, tiny_dataset, backend):
        pool = build_graph_pool(tiny_dataset.train, backend, 5, 0, None, None, tiny_dataset.label_spaces)
        _, labels = pool[1]
        assert labels.cta.tolist() == [0, -1]
        assert labels.cpa.tolist() == [[1, 0, 0]]
        assert labels.tta == 1
        assert labels.has(Task.CTA)

    def test_save_load_round_trip(self, tmp_path, tiny_dataset, backend):
        pool = build_graph_pool(tiny_dataset.train, backend, 5, 0, None, None, tiny_dataset.label_spaces,
                                meta={"key": "abc", "split": "train"})
        path = save_pool(pool, tmp_path / "train-abc.pool")
        loaded = load_pool(path, expected_key="abc")
        assert loaded.meta["backend_id"] == backend.backend_id
        for (g1, l1), (g2, l2) in zip(pool.entries, loaded.entries):
            assert g1.table_id == g2.table_id
            np.testing.assert_array_equal(g1.features, g2.features)
            np.testing.assert_array_equal(g1.edges, g2.edges)
            np.testing.assert_array_equal(l1.cta, l2.cta)
            assert l1.tta == l2.tta

    def test_rebuild_gives_identical_bytes(self, tmp_path, tiny_dataset, backend):
        a = save_pool(build_graph_pool(tiny_dataset.train, backend, 5, 0, None, None, tiny_dataset.label_spaces),
                      tmp_path / "a.pool")
        b = save_pool(build_graph_pool(tiny_dataset.train, backend, 5, 0, None, None, tiny_dataset.label_spaces),
                      tmp_path / "b.pool")
        assert a.read_bytes() == b.read_bytes()

    def test_truncated_pool(self, tmp_path, tiny_dataset, backend):
        path = save_pool(build_graph_pool(tiny_dataset.train, backend, 5, 0, None, None, tiny_dataset.label_spaces),
                         tmp_path / "p.pool")
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(PoolMismatchError, match="truncated"):
            load_pool(path)

    def test_key_mismatch(self, tmp_path, tiny_dataset, backend):
        pool = build_graph_pool(tiny_dataset.train, backend, 5, 0, None, None, tiny_dataset.label_spaces,
                                meta={"key": "abc"})
        path = save_pool(pool, tmp_path / "p.pool")
        with pytest.raises(PoolMismatchError, match="config hash"):
            load_pool(path, expected_key="zzz")

    def test_empty_split_rejected(self, backend, tiny_dataset):
        with pytest.raises(ArgumentError):
            build_graph_pool((), backend, 5, 0, None, None, tiny_dataset.label_spaces)

    def test_parallel_build_keeps_order(self, small_synth, backend):
        serial = build_graph_pool(small_synth.train, backend, 5, 0, None, None, small_synth.label_spaces)
        parallel = build_graph_pool(small_synth.train, backend, 5, 0, None, None, small_synth.label_spaces, jobs=4)
        assert [g.table_id for g in serial.graphs] == [g.table_id for g in parallel.graphs]
