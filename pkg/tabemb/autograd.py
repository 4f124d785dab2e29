"""
Reverse-mode automatic differentiation over numpy f64 arrays.

Only the operations the column-graph networks need are implemented. Every op is a
Function subclass: forward() works on raw arrays and stashes what backward()
needs; Function.apply() wires the result into the graph when gradients are on.
"""
from __future__ import annotations
import contextlib
import threading
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    def __init__(self, data, requires_grad: bool = False, ctx: Optional["Function"] = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.ctx = ctx

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    # arithmetic
    def __neg__(self): return Neg.apply(self)
    def __add__(self, x): return Add.apply(self, _lift(x))
    def __radd__(self, x): return Add.apply(_lift(x), self)
    def __sub__(self, x): return Sub.apply(self, _lift(x))
    def __rsub__(self, x): return Sub.apply(_lift(x), self)
    def __mul__(self, x): return Mul.apply(self, _lift(x))
    def __rmul__(self, x): return Mul.apply(_lift(x), self)
    def __truediv__(self, x): return Div.apply(self, _lift(x))
    def __matmul__(self, x): return MatMul.apply(self, _lift(x))

    # elementwise
    def exp(self): return Exp.apply(self)
    def tanh(self): return Tanh.apply(self)
    def sigmoid(self): return Sigmoid.apply(self)
    def elu(self): return Elu.apply(self)
    def leaky_relu(self, slope: float = 0.2): return LeakyRelu.apply(self, slope=slope)

    # shape
    def reshape(self, *shape: int): return Reshape.apply(self, shape=shape)
    def sum(self, axis: Optional[int] = None, keepdims: bool = False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)
    def gather(self, index: np.ndarray): return Gather.apply(self, index=np.asarray(index, dtype=np.int64))

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into .grad of every leaf that requires it."""
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data) if grad is None else _as_array(grad)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.ctx is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.ctx.parents, node.ctx.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.ctx is not None:
            stack.extend((p, False) for p in node.ctx.parents if id(p) not in visited)
    return order


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Function:
    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *parents: Tensor, **kwargs) -> Tensor:
        ctx = cls(*parents)
        out = ctx.forward(*[p.data for p in parents], **kwargs)
        track = grad_enabled() and any(p.requires_grad for p in parents)
        return Tensor(out, requires_grad=track, ctx=ctx if track else None)

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---- Arithmetic ----------------------------------------------------------------

class Neg(Function):
    def forward(self, x): return -x
    def backward(self, grad): return (-grad,)


class Add(Function):
    def forward(self, x, y):
        self.shapes = x.shape, y.shape
        return x + y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x, y):
        self.shapes = x.shape, y.shape
        return x - y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return unbroadcast(grad * self.y, self.x.shape), unbroadcast(grad * self.x, self.y.shape)


class Div(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x / y

    def backward(self, grad):
        return (unbroadcast(grad / self.y, self.x.shape),
                unbroadcast(-grad * self.x / (self.y * self.y), self.y.shape))


class MatMul(Function):
    # einsum keeps the accumulation order of each output row independent of its position
    def forward(self, x, y):
        self.x, self.y = x, y
        return np.einsum("ik,kj->ij", x, y)

    def backward(self, grad):
        return grad @ self.y.T, self.x.T @ grad


# ---- Elementwise -----------------------------------------------------------------

class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad): return (grad * self.out,)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad): return (grad * (1.0 - self.out * self.out),)


class Sigmoid(Function):
    def forward(self, x):
        self.out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.out

    def backward(self, grad): return (grad * self.out * (1.0 - self.out),)


class LeakyRelu(Function):
    def forward(self, x, slope: float = 0.2):
        self.scale = np.where(x > 0, 1.0, slope)
        return x * self.scale

    def backward(self, grad): return (grad * self.scale,)


class Elu(Function):
    def forward(self, x):
        self.positive = x > 0
        self.neg = np.expm1(np.minimum(x, 0.0))
        return np.where(self.positive, x, self.neg)

    def backward(self, grad): return (grad * np.where(self.positive, 1.0, self.neg + 1.0),)


# ---- Shape -----------------------------------------------------------------------

class Reshape(Function):
    def forward(self, x, shape=()):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad): return (grad.reshape(self.in_shape),)


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Concat(Function):
    def forward(self, *xs, axis: int = -1):
        self.axis = axis
        self.splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return np.concatenate(xs, axis=axis)

    def backward(self, grad): return tuple(np.split(grad, self.splits, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


class Gather(Function):
    """Rows x[index] (index may repeat)."""
    def forward(self, x, index=None):
        self.in_shape, self.index = x.shape, index
        return x[index]

    def backward(self, grad):
        out = np.zeros(self.in_shape)
        np.add.at(out, self.index, grad)
        return (out,)


# ---- Segment reductions --------------------------------------------------------

class SegmentSum(Function):
    """
    out[s] = sum of x[e] over rows e with segment[e] == s.

    Rows are scattered into a [segments, slots, ...] buffer (slot = position of the
    row within its segment) and summed after sorting along the slot axis, so the
    result depends only on the multiset of values in each segment.
    """
    def forward(self, x, segment=None, slot=None, n_segments=0, n_slots=0):
        self.segment = segment
        buf = np.zeros((n_segments, max(n_slots, 1)) + x.shape[1:])
        buf[segment, slot] = x
        return np.sort(buf, axis=1).sum(axis=1)

    def backward(self, grad): return (grad[self.segment],)


def segment_sum(x: Tensor, segment: np.ndarray, slot: np.ndarray, n_segments: int, n_slots: int) -> Tensor:
    return SegmentSum.apply(x, segment=segment, slot=slot, n_segments=n_segments, n_slots=n_slots)


def segment_max(values: np.ndarray, segment: np.ndarray, n_segments: int) -> np.ndarray:
    """Per-segment maximum of a raw array (no gradient); empty segments get 0."""
    out = np.full((n_segments,) + values.shape[1:], -np.inf)
    np.maximum.at(out, segment, values)
    out[np.isneginf(out)] = 0.0
    return out


# ---- Loss ------------------------------------------------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class CrossEntropy(Function):
    """Mean over rows of -log softmax(logits)[gold]."""
    def forward(self, logits, gold=None):
        self.gold = gold
        logp = log_softmax(logits)
        self.probs = np.exp(logp)
        rows = np.arange(len(gold))
        return np.asarray(-logp[rows, gold].mean())

    def backward(self, grad):
        g = self.probs.copy()
        g[np.arange(len(self.gold)), self.gold] -= 1.0
        return (g * (grad / len(self.gold)),)


def cross_entropy(logits: Tensor, gold: np.ndarray) -> Tensor:
    return CrossEntropy.apply(logits, gold=np.asarray(gold, dtype=np.int64))
