from __future__ import annotations
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

from .autograd import Tensor, log_softmax
from .errors import ArgumentError, NonFiniteGradientError


@dataclass
class AdamState:
    """
    Adam with bias correction. Weight decay is the L2 term added to the gradient
    (g <- g + wd * theta) before the moment updates.
    """
    lr: float = 1e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Sequence[Tuple[str, Tensor]]) -> None:
    """One update of every named parameter from its .grad (missing grad counts as zero)."""
    grads = {}
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ArgumentError(f"gradient for '{name}' has shape {g.shape}, parameter has {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        grads[name] = g

    state.step += 1
    t = state.step
    for name, p in params:
        g = grads[name]
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.beta1 * state.m.get(name, 0.0) + (1.0 - state.beta1) * g
        v = state.beta2 * state.v.get(name, 0.0) + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def cross_entropy_loss(logits: np.ndarray, gold: int) -> Tuple[float, np.ndarray]:
    """-log softmax(logits)[gold] and its gradient softmax(logits) - onehot(gold)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= gold < logits.shape[-1]:
        raise ArgumentError(f"gold ordinal {gold} is outside [0, {logits.shape[-1]})")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[gold] -= 1.0
    return float(-logp[gold]), grad
