"""Dense masked-matrix references and small helpers shared by the test modules."""
from __future__ import annotations
from collections import Counter
from typing import Dict, Mapping, Sequence

import numpy as np

from tabemb.colgraph import ColumnGraph


def random_graph(rng: np.random.Generator, n: int, d: int, complete: bool = True, table_id: str = "g") -> ColumnGraph:
    """Random features; complete digraph with self-loops, or self-loops plus a random edge subset."""
    if complete:
        edges = [(s, t) for t in range(n) for s in range(n)]
    else:
        edges = [(v, v) for v in range(n)]
        edges += [(s, t) for t in range(n) for s in range(n) if s != t and rng.random() < 0.5]
    return ColumnGraph(table_id, rng.normal(size=(n, d)), np.array(edges, dtype=np.int64), np.arange(n))


def adjacency(graph: ColumnGraph) -> np.ndarray:
    """A[u, v] = 1 when there is an edge v -> u."""
    A = np.zeros((graph.n, graph.n))
    for src, dst in graph.edges:
        A[dst, src] = 1.0
    return A


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def dense_gat(params: Mapping[str, np.ndarray], graph: ColumnGraph, H: np.ndarray, heads: int,
              last: bool = False, return_attention: bool = False):
    A = adjacency(graph)
    z = H @ params["weight"]
    hk = z.shape[1] // heads
    outs, alphas = [], []
    for k in range(heads):
        zk = z[:, k * hk:(k + 1) * hk]
        logits = (zk @ params["att_dst"][k])[:, None] + (zk @ params["att_src"][k])[None, :]
        logits = np.where(logits > 0, logits, 0.2 * logits)
        logits = np.where(A > 0, logits, -np.inf)
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        alpha = w / w.sum(axis=1, keepdims=True)
        alphas.append(alpha)
        outs.append(alpha @ zk)
    out = np.concatenate(outs, axis=1)
    out = out if last else _elu(out)
    return (out, alphas) if return_attention else out


def dense_gcn(params: Mapping[str, np.ndarray], graph: ColumnGraph, H: np.ndarray, last: bool = False) -> np.ndarray:
    A = adjacency(graph)
    d = A.sum(axis=1)
    norm = A / np.sqrt(d[:, None] * d[None, :])
    out = norm @ (H @ params["weight"])
    return out if last else _elu(out)


def dense_ggnn(params: Mapping[str, np.ndarray], graph: ColumnGraph, H: np.ndarray) -> np.ndarray:
    A = adjacency(graph)
    m = (A / A.sum(axis=1, keepdims=True)) @ (H @ params["weight"])
    z = _sigmoid(m @ params["w_z"] + H @ params["u_z"] + params["b_z"])
    r = _sigmoid(m @ params["w_r"] + H @ params["u_r"] + params["b_r"])
    c = np.tanh(m @ params["w_c"] + (r * H) @ params["u_c"] + params["b_c"])
    return (1.0 - z) * H + z * c


def counting_micro_f1(predictions: Sequence, golds: Sequence) -> float:
    """Brute-force pooled TP / FP / FN tally over every class."""
    classes = set(predictions) | set(golds)
    tp = fp = fn = 0
    for c in classes:
        for p, g in zip(predictions, golds):
            tp += p == c and g == c
            fp += p == c and g != c
            fn += p != c and g == c
    return 2 * tp / (2 * tp + fp + fn)


def train_frequencies(labels: Sequence[str], space: Sequence[str]) -> Dict[str, int]:
    counts = Counter(labels)
    return {l: counts.get(l, 0) for l in space}
