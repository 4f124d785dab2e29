import numpy as np
import pytest

from tabemb.colgraph import NodePooling
from tabemb.config import Variant
from tabemb.gradcheck import _rel_error, _strict_rel_error, composite_loss, grad_check
from tabemb.layers import GnnModel, TaskHead, named_parameters
from tabemb.tables import Task

from oracles import random_graph

N_LABELS = 4


def _target(task, rng):
    if task is Task.CTA:
        return np.arange(5), rng.integers(0, N_LABELS, size=5)
    if task is Task.CPA:
        return np.array([[0, 1], [1, 0], [3, 4]]), rng.integers(0, N_LABELS, size=3)
    return NodePooling.single(5), np.array([2])


@pytest.mark.parametrize("task", [Task.CTA, Task.CPA, Task.TTA])
@pytest.mark.parametrize("variant", [Variant.GAT, Variant.GCN, Variant.GGNN, Variant.NONE])
def test_full_loss_gradient(rng, variant, task):
    model = GnnModel.initialize(variant, 32, 16, 2, 4, rng)
    head = TaskHead.initialize(task, 16, N_LABELS, rng)
    graph = random_graph(rng, 5, 32, complete=False)
    target, gold = _target(task, rng)
    report = grad_check(model, head, graph, target, gold)
    assert report.passed, report.per_parameter
    assert set(report.per_parameter) == {name for name, _ in named_parameters(model, head)}


def test_parameters_are_restored(rng):
    model = GnnModel.initialize(Variant.GAT, 8, 8, 1, 2, rng)
    head = TaskHead.initialize(Task.CTA, 8, 3, rng)
    graph = random_graph(rng, 3, 8)
    before = {name: p.data.copy() for name, p in named_parameters(model, head)}
    loss_before = float(composite_loss(model, head, graph, np.arange(3), np.array([0, 1, 2])).data)
    grad_check(model, head, graph, np.arange(3), np.array([0, 1, 2]))
    for name, p in named_parameters(model, head):
        np.testing.assert_array_equal(p.data, before[name])
        assert p.grad is None
    assert float(composite_loss(model, head, graph, np.arange(3), np.array([0, 1, 2])).data) == loss_before


def test_report_keeps_first_probe(rng):
    model = GnnModel.initialize(Variant.GCN, 8, 8, 1, 1, rng)
    head = TaskHead.initialize(Task.TTA, 8, 2, rng)
    graph = random_graph(rng, 3, 8)
    report = grad_check(model, head, graph, NodePooling.single(3), np.array([1]))
    assert report.first_probe_max >= 0.0
    assert report.max_rel_error <= max(report.first_probe_max, report.tolerance)
    assert report.tolerance == 1e-4
    assert np.isfinite(report.strict_max_rel_error)
    assert report.strict_max_rel_error >= report.first_probe_max


def test_plain_relative_error_on_small_gradients():
    assert float(_rel_error(1e-3, 1.1e-3)) == pytest.approx(1e-4)
    assert _strict_rel_error(1e-3, 1.1e-3) == pytest.approx(1 / 11)
    assert _strict_rel_error(2.0, 2.0) == 0.0
    assert _strict_rel_error(0.0, 0.0) == 0.0
