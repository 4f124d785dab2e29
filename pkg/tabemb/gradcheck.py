from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .autograd import Tensor, cross_entropy, no_grad
from .layers import GnnModel, HeadTarget, TaskHead, head_forward, named_parameters

logger = logging.getLogger(__name__)


def composite_loss(model: GnnModel, head: TaskHead, graph, target: HeadTarget, gold: np.ndarray) -> Tensor:
    psi = model.forward(graph.features, graph)
    return cross_entropy(head_forward(head, psi, target), gold)


@dataclass
class GradCheckReport:
    max_rel_error: float
    first_probe_max: float
    tolerance: float
    per_parameter: Dict[str, float] = field(default_factory=dict)
    reprobed: int = 0
    strict_max_rel_error: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _rel_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def _strict_rel_error(a: float, n: float) -> float:
    """|a - n| / max(|a|, |n|), 0 when both are 0."""
    scale = max(abs(a), abs(n))
    return abs(a - n) / scale if scale > 0 else 0.0


def grad_check(model: GnnModel, head: TaskHead, graph, target: HeadTarget, gold: np.ndarray,
               tolerance: float = 1e-4, step: float = 1e-4) -> GradCheckReport:
    """
    Autodiff gradients of the full loss vs central differences, over every parameter.
    The pass criterion uses |a - n| / max(1, |a|, |n|). Coordinates whose first probe
    exceeds the tolerance (kinks of LeakyReLU / ELU) are probed again at step / 100;
    the report keeps both maxima, plus the plain relative error at the fixed step.
    """
    named = named_parameters(model, head)
    for _, p in named:
        p.zero_grad()
    composite_loss(model, head, graph, target, gold).backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in named}

    def _numeric(p: Tensor, i: int, h: float) -> float:
        flat = p.data.reshape(-1)
        original = flat[i]
        with no_grad():
            flat[i] = original + h
            up = float(composite_loss(model, head, graph, target, gold).data)
            flat[i] = original - h
            down = float(composite_loss(model, head, graph, target, gold).data)
        flat[i] = original
        return (up - down) / (2.0 * h)

    per_parameter: Dict[str, float] = {}
    first_max, strict_max, reprobed = 0.0, 0.0, 0
    for name, p in named:
        a = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(a.size):
            numeric = _numeric(p, i, step)
            err = float(_rel_error(a[i], numeric))
            first_max = max(first_max, err)
            strict_max = max(strict_max, _strict_rel_error(float(a[i]), numeric))
            if err > tolerance:
                reprobed += 1
                err = float(_rel_error(a[i], _numeric(p, i, step / 100.0)))
            worst = max(worst, err)
        per_parameter[name] = worst
        p.zero_grad()

    report = GradCheckReport(max(per_parameter.values(), default=0.0), first_max, tolerance, per_parameter, reprobed,
                             strict_max)
    logger.debug(f"grad_check: max rel error {report.max_rel_error:.2e} "
                 f"(first probe {report.first_probe_max:.2e}, plain {strict_max:.2e}, {reprobed} re-probed)")
    return report
