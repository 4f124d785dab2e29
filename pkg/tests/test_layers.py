import numpy as np
import pytest

from tabemb.autograd import Tensor, parameter
from tabemb.colgraph import ColumnGraph, NodePooling, permute_graph
from tabemb.config import Variant
from tabemb.embedding import Stage
from tabemb.errors import ArgumentError, StructuralError
from tabemb.layers import (GnnModel, TaskHead, gat_layer_forward, gcn_layer_forward, ggnn_layer_forward,
                           head_forward, named_parameters, parameters_digest, struct_embedding)
from tabemb.tables import Task

from oracles import dense_gat, dense_gcn, dense_ggnn, random_graph


def _model(variant, rng, d=6, hidden=8, layers=2, heads=2):
    return GnnModel.initialize(variant, d, hidden, layers, heads, rng)


def _raw(params):
    return {k: v.data for k, v in params.items()}


def _projection(model, graph):
    return (Tensor(graph.features) @ model.params["input.weight"] + model.params["input.bias"]).data


class TestAgainstDenseReference:
    @pytest.mark.parametrize("last", [False, True])
    def test_gat_layer(self, rng, last):
        model = _model(Variant.GAT, rng)
        graph = random_graph(rng, 5, 8, complete=False)
        H = rng.normal(size=(5, 8))
        out = gat_layer_forward(model.layer_params(0), graph, Tensor(H), heads=2, last=last).data
        np.testing.assert_allclose(out, dense_gat(_raw(model.layer_params(0)), graph, H, 2, last), atol=1e-12)

    def test_gcn_layer(self, rng):
        model = _model(Variant.GCN, rng)
        graph = random_graph(rng, 6, 8, complete=False)
        H = rng.normal(size=(6, 8))
        out = gcn_layer_forward(model.layer_params(0), graph, Tensor(H)).data
        np.testing.assert_allclose(out, dense_gcn(_raw(model.layer_params(0)), graph, H), atol=1e-12)

    def test_ggnn_layer(self, rng):
        model = _model(Variant.GGNN, rng)
        graph = random_graph(rng, 4, 8, complete=False)
        H = rng.normal(size=(4, 8))
        out = ggnn_layer_forward(model.layer_params(1), graph, Tensor(H)).data
        np.testing.assert_allclose(out, dense_ggnn(_raw(model.layer_params(1)), graph, H), atol=1e-12)


class TestAttention:
    def test_weights_sum_to_one_per_node_and_head(self, rng):
        model = _model(Variant.GAT, rng, heads=4)
        graph = random_graph(rng, 7, 6, complete=False)
        attention = []
        model.forward(graph.features, graph, attention=attention)
        assert len(attention) == 2
        for alpha in attention:
            assert alpha.shape == (len(graph.edges), 4)
            assert (alpha > 0).all()
            for k in range(4):
                np.testing.assert_allclose(np.bincount(graph.edges[:, 1], weights=alpha[:, k]), 1.0, atol=1e-12)

    def test_single_node_attends_to_itself(self, rng):
        model = _model(Variant.GAT, rng)
        graph = random_graph(rng, 1, 6)
        attention = []
        out = model.forward(graph.features, graph, attention=attention)
        assert out.shape == (1, 8)
        np.testing.assert_array_equal(attention[0], np.ones((1, 2)))

    def test_identical_nodes_split_attention_evenly(self, rng):
        model = _model(Variant.GAT, rng)
        row = rng.normal(size=6)
        graph = ColumnGraph("twin", np.stack([row, row]), np.array([[0, 0], [1, 0], [0, 1], [1, 1]]), np.arange(2))
        attention = []
        model.forward(graph.features, graph, attention=attention)
        np.testing.assert_array_equal(attention[0], np.full((4, 2), 0.5))


class TestModel:
    @pytest.mark.parametrize("variant", [Variant.GAT, Variant.GCN, Variant.GGNN, Variant.NONE])
    def test_permutation_equivariance_is_exact(self, rng, variant):
        model = _model(variant, rng, layers=3)
        graph = random_graph(rng, 6, 6)
        perm = rng.permutation(6)
        out1 = model.forward(graph.features, graph).data
        moved = permute_graph(graph, perm)
        out2 = model.forward(moved.features, moved).data
        assert np.array_equal(out2[perm], out1)

    @pytest.mark.parametrize("variant", [Variant.GAT, Variant.GCN])
    def test_zero_layer_weights_leave_projection(self, rng, variant):
        model = _model(variant, rng)
        for name, p in model.params.items():
            if name.startswith("layers."):
                p.data = np.zeros_like(p.data)
        graph = random_graph(rng, 4, 6)
        assert np.array_equal(model.forward(graph.features, graph).data, _projection(model, graph))

    def test_closed_update_gate_keeps_state(self, rng):
        model = _model(Variant.GGNN, rng)
        for s in range(model.layers):
            model.params[f"layers.{s}.b_z"].data = np.full(model.hidden, -1e3)
        graph = random_graph(rng, 4, 6)
        assert np.array_equal(model.forward(graph.features, graph).data, _projection(model, graph))

    def test_no_message_passing_ignores_edges(self, rng):
        model = _model(Variant.NONE, rng)
        dense = random_graph(rng, 5, 6)
        sparse = ColumnGraph("s", dense.features, np.array([[v, v] for v in range(5)]), np.arange(5))
        assert np.array_equal(model.forward(dense.features, dense).data, model.forward(sparse.features, sparse).data)
        assert not any(name.startswith("layers.") for name in model.params)

    def test_node_without_in_edges(self, rng):
        model = _model(Variant.GAT, rng)
        graph = ColumnGraph("g", rng.normal(size=(2, 6)), np.array([[0, 0], [0, 1]]), np.arange(2))
        model.forward(graph.features, graph)
        lonely = ColumnGraph("g", rng.normal(size=(2, 6)), np.array([[0, 0]]), np.arange(2))
        with pytest.raises(StructuralError):
            model.forward(lonely.features, lonely)

    def test_heads_must_divide_hidden(self, rng):
        with pytest.raises(ArgumentError):
            GnnModel.initialize(Variant.GAT, 6, 10, 2, 4, rng)

    def test_feature_width_mismatch(self, rng):
        model = _model(Variant.GCN, rng)
        graph = random_graph(rng, 3, 5)
        with pytest.raises(ArgumentError, match="input width"):
            model.forward(graph.features, graph)

    def test_struct_embedding_rows(self, rng):
        model = _model(Variant.GAT, rng)
        graph = random_graph(rng, 3, 6)
        emb = struct_embedding(model, graph)
        assert len(emb) == 3
        assert all(e.stage is Stage.REFINED and e.dim == 8 for e in emb)
        np.testing.assert_array_equal(emb[2].vector, model.forward(graph.features, graph).data[2])


class TestHeads:
    def test_zero_weights_give_bias(self, rng):
        head = TaskHead.initialize(Task.CTA, 4, 3, rng)
        head.weight.data = np.zeros_like(head.weight.data)
        head.bias.data = np.array([1.0, 2.0, 3.0])
        out = head_forward(head, Tensor(rng.normal(size=(5, 4))), np.array([0, 4]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]] * 2)

    def test_pair_order_matters(self, rng):
        head = TaskHead.initialize(Task.CPA, 4, 3, rng)
        assert head.in_width == 8
        psi = Tensor(rng.normal(size=(3, 4)))
        out = head_forward(head, psi, np.array([[0, 1], [1, 0]])).data
        assert not np.allclose(out[0], out[1])

    def test_pair_on_same_column_rejected(self, rng):
        head = TaskHead.initialize(Task.CPA, 4, 3, rng)
        with pytest.raises(ArgumentError):
            head_forward(head, Tensor(rng.normal(size=(3, 4))), np.array([[2, 2]]))

    def test_table_head_uses_mean_of_columns(self, rng):
        head = TaskHead.initialize(Task.TTA, 4, 2, rng)
        psi = rng.normal(size=(5, 4))
        pooling = NodePooling(np.array([0, 0, 1, 1, 1]), np.array([0, 1, 0, 1, 2]), 2, 3, np.array([2, 3]))
        out = head_forward(head, Tensor(psi), pooling).data
        expected = np.stack([psi[:2].mean(axis=0), psi[2:].mean(axis=0)]) @ head.weight.data + head.bias.data
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_single_graph_pooling(self, rng):
        head = TaskHead.initialize(Task.TTA, 4, 2, rng)
        psi = rng.normal(size=(3, 4))
        out = head_forward(head, Tensor(psi), NodePooling.single(3)).data
        np.testing.assert_allclose(out[0], psi.mean(axis=0) @ head.weight.data + head.bias.data, atol=1e-12)


def test_digest_tracks_parameter_values(rng):
    model = _model(Variant.GCN, rng)
    head = TaskHead.initialize(Task.CTA, 8, 3, rng)
    named = named_parameters(model, head)
    before = parameters_digest(named)
    assert before == parameters_digest(named_parameters(model, head))
    head.bias.data = head.bias.data + 1.0
    assert parameters_digest(named) != before


def test_parameters_are_trainable(rng):
    model = _model(Variant.GAT, rng)
    assert all(p.requires_grad for p in model.params.values())
    assert isinstance(parameter([1.0]).data, np.ndarray)


def test_attention_normalized_on_random_graphs(rng):
    for _ in range(100):
        n = int(rng.integers(1, 11))
        heads = int(rng.choice([1, 2, 4]))
        model = GnnModel.initialize(Variant.GAT, 5, 8, 1, heads, rng)
        graph = random_graph(rng, n, 5, complete=bool(rng.integers(2)))
        attention = []
        model.forward(graph.features, graph, attention=attention)
        sums = np.stack([np.bincount(graph.edges[:, 1], weights=attention[0][:, k], minlength=n)
                         for k in range(heads)])
        np.testing.assert_allclose(sums, 1.0, atol=1e-6)


def test_predictions_follow_column_permutation(rng):
    for _ in range(50):
        n = int(rng.integers(2, 9))
        model = _model(Variant.GAT, rng)
        head = TaskHead.initialize(Task.CTA, 8, 5, rng)
        graph = random_graph(rng, n, 6)
        perm = rng.permutation(n)
        moved = permute_graph(graph, perm)
        psi = struct_embedding(model, graph)
        psi_moved = struct_embedding(model, moved)
        for i in range(n):
            assert np.array_equal(psi_moved[perm[i]].vector, psi[i].vector)
        logits = head_forward(head, Tensor(np.stack([e.vector for e in psi])), np.arange(n)).data
        logits_moved = head_forward(head, Tensor(np.stack([e.vector for e in psi_moved])), np.arange(n)).data
        np.testing.assert_array_equal(np.argmax(logits_moved, axis=1)[perm], np.argmax(logits, axis=1))
