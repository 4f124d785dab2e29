from __future__ import annotations
import hashlib
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .autograd import Tensor, concat, no_grad, parameter, segment_max, segment_sum
from .colgraph import GraphIndex, NodePooling
from .config import Variant
from .embedding import ColumnEmbedding, Stage
from .errors import ArgumentError
from .tables import Task

LEAKY_SLOPE = 0.2

GGNN_GATES = ("z", "r", "c")


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def _index_of(graph) -> GraphIndex:
    index = graph.index
    index.require_in_edges()
    return index


# ---- Message-passing layers ----------------------------------------------------

def gat_layer_forward(params: Mapping[str, Tensor], graph, H: Tensor, heads: int, last: bool = False,
                      attention: Optional[List[np.ndarray]] = None) -> Tensor:
    """
    Multi-head graph attention. For an edge v -> u:
        e_uv = LeakyReLU(a_dst . z_u + a_src . z_v),  alpha_uv = softmax over u's in-edges
    Head outputs sum_v alpha_uv z_v are concatenated; ELU unless this is the last layer.
    When `attention` is given, the (edges x heads) alpha matrix is appended to it.
    """
    idx = _index_of(graph)
    n = idx.n_nodes
    z = H @ params["weight"]
    width = z.shape[1]
    z3 = z.reshape(n, heads, width // heads)
    s_dst = (z3 * params["att_dst"]).sum(axis=-1)
    s_src = (z3 * params["att_src"]).sum(axis=-1)
    e = (s_dst.gather(idx.dst) + s_src.gather(idx.src)).leaky_relu(LEAKY_SLOPE)
    shift = segment_max(e.data, idx.dst, n)[idx.dst]
    w = (e - shift).exp()
    denom = segment_sum(w, idx.dst, idx.slot, n, idx.n_slots)
    alpha = w / denom.gather(idx.dst)
    if attention is not None:
        attention.append(alpha.data.copy())
    msg = z3.gather(idx.src) * alpha.reshape(len(idx.dst), heads, 1)
    out = segment_sum(msg, idx.dst, idx.slot, n, idx.n_slots).reshape(n, width)
    return out if last else out.elu()


def gcn_layer_forward(params: Mapping[str, Tensor], graph, H: Tensor, last: bool = False) -> Tensor:
    """D^-1/2 A D^-1/2 H W with in-degrees of the given edges; ELU unless last."""
    idx = _index_of(graph)
    inv_sqrt = 1.0 / np.sqrt(idx.in_degree.astype(np.float64))
    norm = (inv_sqrt[idx.src] * inv_sqrt[idx.dst])[:, None]
    z = H @ params["weight"]
    out = segment_sum(z.gather(idx.src) * norm, idx.dst, idx.slot, idx.n_nodes, idx.n_slots)
    return out if last else out.elu()


def ggnn_layer_forward(params: Mapping[str, Tensor], graph, H: Tensor) -> Tensor:
    """Mean in-neighbour message m = mean(W h_v), then a GRU step of h with input m."""
    idx = _index_of(graph)
    inv_deg = (1.0 / idx.in_degree.astype(np.float64))[:, None]
    m = segment_sum((H @ params["weight"]).gather(idx.src), idx.dst, idx.slot, idx.n_nodes, idx.n_slots) * inv_deg
    z = (m @ params["w_z"] + H @ params["u_z"] + params["b_z"]).sigmoid()
    r = (m @ params["w_r"] + H @ params["u_r"] + params["b_r"]).sigmoid()
    c = (m @ params["w_c"] + (r * H) @ params["u_c"] + params["b_c"]).tanh()
    return (1.0 - z) * H + z * c


# ---- Model ---------------------------------------------------------------------

@dataclass
class GnnModel:
    """Input projection d -> h followed by `layers` residual message-passing layers."""
    variant: Variant
    in_dim: int
    hidden: int
    layers: int
    heads: int
    params: Dict[str, Tensor]

    def __post_init__(self):
        if self.layers < 1:
            raise ArgumentError(f"GNN needs at least one layer, got {self.layers}")
        if self.variant is Variant.GAT and self.hidden % self.heads:
            raise ArgumentError(f"hidden width {self.hidden} is not divisible by {self.heads} heads")

    @classmethod
    def initialize(cls, variant: Variant, in_dim: int, hidden: int, layers: int, heads: int,
                   rng: np.random.Generator) -> "GnnModel":
        p: Dict[str, np.ndarray] = {
            "input.weight": xavier_uniform(rng, in_dim, hidden),
            "input.bias": np.zeros(hidden),
        }
        if variant is not Variant.NONE:
            for s in range(layers):
                pre = f"layers.{s}."
                p[pre + "weight"] = xavier_uniform(rng, hidden, hidden)
                if variant is Variant.GAT:
                    hk = hidden // heads
                    p[pre + "att_src"] = xavier_uniform(rng, hk, 1, shape=(heads, hk))
                    p[pre + "att_dst"] = xavier_uniform(rng, hk, 1, shape=(heads, hk))
                elif variant is Variant.GGNN:
                    for gate in GGNN_GATES:
                        p[pre + f"w_{gate}"] = xavier_uniform(rng, hidden, hidden)
                        p[pre + f"u_{gate}"] = xavier_uniform(rng, hidden, hidden)
                        p[pre + f"b_{gate}"] = np.zeros(hidden)
        return cls(variant, in_dim, hidden, layers, heads, {k: parameter(v) for k, v in p.items()})

    def layer_params(self, s: int) -> Dict[str, Tensor]:
        pre = f"layers.{s}."
        return {k[len(pre):]: v for k, v in self.params.items() if k.startswith(pre)}

    def forward(self, features: "np.ndarray | Tensor", graph,
                attention: Optional[List[np.ndarray]] = None) -> Tensor:
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.shape[-1] != self.in_dim:
            raise ArgumentError(f"feature width {x.shape[-1]} does not match model input width {self.in_dim}")
        H = x @ self.params["input.weight"] + self.params["input.bias"]
        if self.variant is Variant.NONE:
            return H
        for s in range(self.layers):
            params = self.layer_params(s)
            last = s == self.layers - 1
            if self.variant is Variant.GAT:
                H = gat_layer_forward(params, graph, H, self.heads, last, attention) + H
            elif self.variant is Variant.GCN:
                H = gcn_layer_forward(params, graph, H, last) + H
            else:
                # no "+ H" here: the GRU interpolation (1 - z) * H + z * h~ is the skip path,
                # and a closed update gate (z = 0) leaves H unchanged
                H = ggnn_layer_forward(params, graph, H)
        return H


def struct_embedding(model: GnnModel, graph) -> List[ColumnEmbedding]:
    with no_grad():
        H = model.forward(graph.features, graph)
    return [ColumnEmbedding(row.copy(), Stage.REFINED) for row in H.data]


# ---- Heads ---------------------------------------------------------------------

HeadTarget = Union[np.ndarray, NodePooling]


@dataclass
class TaskHead:
    """Single linear map from refined embeddings to label logits."""
    task: Task
    weight: Tensor
    bias: Tensor

    @classmethod
    def initialize(cls, task: Task, hidden: int, n_labels: int, rng: np.random.Generator) -> "TaskHead":
        in_width = 2 * hidden if task is Task.CPA else hidden
        return cls(task, parameter(xavier_uniform(rng, in_width, n_labels)), parameter(np.zeros(n_labels)))

    @property
    def params(self) -> Dict[str, Tensor]:
        return {"head.weight": self.weight, "head.bias": self.bias}

    @property
    def in_width(self) -> int:
        return int(self.weight.shape[0])


def head_forward(head: TaskHead, psi: Tensor, target: HeadTarget) -> Tensor:
    """
    CTA: target = node indices; CPA: target = (P, 2) ordered node pairs, input psi_i ++ psi_j;
    TTA: target = NodePooling, input = per-graph mean of psi.
    """
    if head.task is Task.CTA:
        x = psi.gather(np.asarray(target, dtype=np.int64))
    elif head.task is Task.CPA:
        pairs = np.asarray(target, dtype=np.int64).reshape(-1, 2)
        if (pairs[:, 0] == pairs[:, 1]).any():
            bad = pairs[pairs[:, 0] == pairs[:, 1]][0]
            raise ArgumentError(f"CPA pair ({bad[0]}, {bad[1]}) relates a column to itself")
        x = concat([psi.gather(pairs[:, 0]), psi.gather(pairs[:, 1])], axis=1)
    else:
        pool: NodePooling = target
        summed = segment_sum(psi, pool.segment, pool.slot, pool.n_segments, pool.n_slots)
        x = summed * (1.0 / pool.counts.astype(np.float64))[:, None]
    if x.shape[-1] != head.in_width:
        raise ArgumentError(f"{head.task.value} head expects width {head.in_width}, got {x.shape[-1]}")
    return x @ head.weight + head.bias


# ---- Parameter bookkeeping -----------------------------------------------------

def named_parameters(model: GnnModel, head: TaskHead) -> List[Tuple[str, Tensor]]:
    return list(model.params.items()) + list(head.params.items())


def parameters_digest(named: Sequence[Tuple[str, Tensor]]) -> str:
    h = hashlib.sha256()
    for name, t in named:
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return h.hexdigest()[:16]
