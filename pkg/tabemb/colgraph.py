from __future__ import annotations
import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .cache import EmbeddingCache
from .config import config_hash
from .embedding import ColumnEmbedding, EmbeddingBackend, column_embeddings
from .errors import ArgumentError, PoolMismatchError, StructuralError
from .tables import AnnotatedTable, LabelSpace, Table, Task

logger = logging.getLogger(__name__)


# ---- Edge-list index ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GraphIndex:
    """Edges (src -> dst) plus each edge's slot in its destination's in-list."""
    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    slot: np.ndarray
    n_slots: int
    in_degree: np.ndarray

    @classmethod
    def from_edges(cls, n_nodes: int, edges: np.ndarray) -> "GraphIndex":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        src, dst = edges[:, 0].copy(), edges[:, 1].copy()
        order = np.argsort(dst, kind="stable")
        sorted_dst = dst[order]
        slot = np.empty(len(dst), dtype=np.int64)
        slot[order] = np.arange(len(dst)) - np.searchsorted(sorted_dst, sorted_dst, side="left")
        in_degree = np.bincount(dst, minlength=n_nodes)
        return cls(n_nodes, src, dst, slot, int(in_degree.max()) if len(dst) else 0, in_degree)

    def require_in_edges(self) -> None:
        if self.n_nodes and self.in_degree.min() == 0:
            lonely = int(np.argmin(self.in_degree))
            raise StructuralError(f"node {lonely} has no in-edges")


@dataclass(frozen=True, eq=False)
class NodePooling:
    """Assignment of nodes to graphs, for per-graph mean pooling."""
    segment: np.ndarray
    slot: np.ndarray
    n_segments: int
    n_slots: int
    counts: np.ndarray

    @classmethod
    def single(cls, n: int) -> "NodePooling":
        return cls(np.zeros(n, dtype=np.int64), np.arange(n, dtype=np.int64), 1, n, np.array([n]))


# ---- Column graph ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ColumnGraph:
    table_id: str
    features: np.ndarray
    edges: np.ndarray
    column_index: np.ndarray

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @cached_property
    def index(self) -> GraphIndex:
        return GraphIndex.from_edges(self.n, self.edges)

    @cached_property
    def pooling(self) -> NodePooling:
        return NodePooling.single(self.n)


def block_partition(n: int, block_size: int) -> List[range]:
    """ceil(n / block_size) consecutive blocks whose sizes differ by at most one."""
    if n < 1 or block_size < 2:
        raise ArgumentError(f"block_partition needs n >= 1 and block_size >= 2, got n={n}, block_size={block_size}")
    k = -(-n // block_size)
    base, extra = divmod(n, k)
    blocks, start = [], 0
    for b in range(k):
        size = base + (1 if b < extra else 0)
        blocks.append(range(start, start + size))
        start += size
    return blocks


def construct_graph(table: Table, psi0: Sequence[ColumnEmbedding],
                    block_size: Optional[int] = None) -> ColumnGraph:
    """Complete directed graph with self-loops over the columns (within each block)."""
    if len(psi0) != table.n:
        raise ArgumentError(f"{table.table_id}: {len(psi0)} embeddings for {table.n} columns")
    dims = {e.dim for e in psi0}
    if len(dims) != 1:
        raise ArgumentError(f"{table.table_id}: embedding width mismatch {sorted(dims)}")
    if block_size is not None and block_size < 2:
        raise ArgumentError(f"block_size must be >= 2, got {block_size}")

    blocks = [range(table.n)] if block_size is None else block_partition(table.n, block_size)
    edges = [(src, dst) for block in blocks for dst in block for src in block]
    return ColumnGraph(
        table_id=table.table_id,
        features=np.stack([e.vector for e in psi0]).astype(np.float64),
        edges=np.asarray(edges, dtype=np.int64),
        column_index=np.arange(table.n, dtype=np.int64),
    )


def permute_graph(graph: ColumnGraph, perm: Sequence[int]) -> ColumnGraph:
    """Relabel nodes so that new node perm[i] is old node i; edges follow."""
    perm = np.asarray(perm, dtype=np.int64)
    features = np.empty_like(graph.features)
    features[perm] = graph.features
    column_index = np.empty_like(graph.column_index)
    column_index[perm] = graph.column_index
    return ColumnGraph(graph.table_id, features, perm[graph.edges], column_index)


# ---- Mini-batches ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Disjoint union of several column graphs."""
    graphs: Tuple[ColumnGraph, ...]
    features: np.ndarray
    offsets: np.ndarray
    index: GraphIndex
    pooling: NodePooling

    @property
    def n(self) -> int:
        return int(self.features.shape[0])


def batch_graphs(graphs: Sequence[ColumnGraph]) -> GraphBatch:
    if not graphs:
        raise ArgumentError("cannot batch zero graphs")
    sizes = np.array([g.n for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets)])
    total = int(sizes.sum())
    segment = np.repeat(np.arange(len(graphs)), sizes)
    slot = np.arange(total) - np.repeat(offsets, sizes)
    pooling = NodePooling(segment, slot, len(graphs), int(sizes.max()), sizes)
    return GraphBatch(
        graphs=tuple(graphs),
        features=np.concatenate([g.features for g in graphs]),
        offsets=offsets,
        index=GraphIndex.from_edges(total, edges),
        pooling=pooling,
    )


# ---- Graph pool --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GraphLabels:
    """Label ordinals; -1 marks an unlabeled column / table."""
    cta: np.ndarray
    cpa: np.ndarray
    tta: int = -1

    def has(self, task: Task) -> bool:
        if task is Task.CTA:
            return bool((self.cta >= 0).any())
        if task is Task.CPA:
            return len(self.cpa) > 0
        return self.tta >= 0


def encode_labels(item: AnnotatedTable, label_spaces: Mapping[Task, LabelSpace]) -> GraphLabels:
    n = item.table.n
    cta = np.full(n, -1, dtype=np.int64)
    if item.cta is not None and Task.CTA in label_spaces:
        space = label_spaces[Task.CTA]
        cta = np.array([space.ordinal(l) if l is not None else -1 for l in item.cta], dtype=np.int64)
    cpa = np.zeros((0, 3), dtype=np.int64)
    if item.cpa and Task.CPA in label_spaces:
        space = label_spaces[Task.CPA]
        cpa = np.array([(i, j, space.ordinal(l)) for i, j, l in item.cpa], dtype=np.int64)
    tta = -1
    if item.tta is not None and Task.TTA in label_spaces:
        tta = label_spaces[Task.TTA].ordinal(item.tta)
    return GraphLabels(cta, cpa, tta)


@dataclass(frozen=True, eq=False)
class GraphPool:
    entries: Tuple[Tuple[ColumnGraph, GraphLabels], ...]
    meta: Mapping[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> Tuple[ColumnGraph, GraphLabels]:
        return self.entries[i]

    @property
    def graphs(self) -> List[ColumnGraph]:
        return [g for g, _ in self.entries]

    def subset(self, indices: Sequence[int]) -> "GraphPool":
        return GraphPool(tuple(self.entries[i] for i in indices), dict(self.meta))


def pool_key(dataset_fingerprint: str, split: str, backend_id: str, m: int, seed: int,
             block_size: Optional[int]) -> str:
    return config_hash({"dataset": dataset_fingerprint, "split": split, "backend": backend_id,
                        "m": m, "seed": seed, "block_size": block_size})


def pool_path(pool_dir: "str | Path", split: str, key: str) -> Path:
    return Path(pool_dir) / f"{split}-{key}.pool"


def build_graph_pool(split: Sequence[AnnotatedTable], backend: EmbeddingBackend, m: int, seed: int,
                     cache: Optional[EmbeddingCache], block_size: Optional[int],
                     label_spaces: Mapping[Task, LabelSpace], meta: Optional[Mapping[str, object]] = None,
                     jobs: int = 1, progress: bool = False) -> GraphPool:
    """Embed every table once with the frozen backend and store (graph, labels) pairs."""
    if not split:
        raise ArgumentError("cannot build a graph pool from an empty split")

    def _one(item: AnnotatedTable) -> Tuple[ColumnGraph, GraphLabels]:
        psi0 = column_embeddings(item.table, backend, m, seed, cache)
        return construct_graph(item.table, psi0, block_size), encode_labels(item, label_spaces)

    bar = tqdm(total=len(split), desc="embed", disable=not progress)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = []
            for entry in pool.map(_one, split):
                entries.append(entry)
                bar.update()
    else:
        entries = []
        for item in split:
            entries.append(_one(item))
            bar.update()
    bar.close()

    info = {"backend_id": backend.backend_id, "m": m, "seed": seed, "block_size": block_size,
            "dim": backend.dim, "label_fingerprints": {t.value: s.fingerprint for t, s in label_spaces.items()}}
    info.update(meta or {})
    return GraphPool(tuple(entries), info)


# ---- Persisted pool ----------------------------------------------------------
# Layout (little-endian):
#   b"TABEMBGP" | version u16 | header length u32 | header JSON (utf-8)
#   per graph:  id length u16 | id utf-8 | n u32 | d u32 | edges u32 | cpa u32
#               features n*d f32 | edges edges*2 i32 (src, dst) | column index n i32
#               cta n i32 | cpa cpa*3 i32 (i, j, label) | tta i32
POOL_MAGIC = b"TABEMBGP"
POOL_VERSION = 1
_POOL_HEAD = struct.Struct("<HI")
_GRAPH_HEAD = struct.Struct("<IIII")


def save_pool(pool: GraphPool, path: "str | Path") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(dict(pool.meta, count=len(pool)), sort_keys=True).encode("utf-8")
    chunks = [POOL_MAGIC, _POOL_HEAD.pack(POOL_VERSION, len(header)), header]
    for graph, labels in pool.entries:
        tid = graph.table_id.encode("utf-8")
        chunks += [
            struct.pack("<H", len(tid)), tid,
            _GRAPH_HEAD.pack(graph.n, graph.dim, len(graph.edges), len(labels.cpa)),
            graph.features.astype("<f4").tobytes(),
            graph.edges.astype("<i4").tobytes(),
            graph.column_index.astype("<i4").tobytes(),
            labels.cta.astype("<i4").tobytes(),
            labels.cpa.astype("<i4").tobytes(),
            struct.pack("<i", labels.tta),
        ]
    path.write_bytes(b"".join(chunks))
    return path


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise PoolMismatchError(f"Pool file {self.path} is truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: "struct.Struct | str") -> tuple:
        s = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(width * count), dtype=dtype).copy()


def load_pool(path: "str | Path", expected_key: Optional[str] = None) -> GraphPool:
    path = Path(path)
    if not path.exists():
        raise PoolMismatchError(f"Pool file not found: {path}")
    r = _Reader(path.read_bytes(), path)
    if r.take(len(POOL_MAGIC)) != POOL_MAGIC:
        raise PoolMismatchError(f"{path} is not a graph pool file")
    version, header_len = r.unpack(_POOL_HEAD)
    if version != POOL_VERSION:
        raise PoolMismatchError(f"{path}: unsupported pool version {version}")
    meta = json.loads(r.take(header_len).decode("utf-8"))
    if expected_key is not None and meta.get("key") != expected_key:
        raise PoolMismatchError(f"{path}: config hash {meta.get('key')} does not match {expected_key}")
    entries = []
    for _ in range(int(meta["count"])):
        (tid_len,) = r.unpack("<H")
        tid = r.take(tid_len).decode("utf-8")
        n, d, n_edges, n_cpa = r.unpack(_GRAPH_HEAD)
        features = r.array("<f4", n * d).astype(np.float64).reshape(n, d)
        edges = r.array("<i4", n_edges * 2).astype(np.int64).reshape(n_edges, 2)
        column_index = r.array("<i4", n).astype(np.int64)
        cta = r.array("<i4", n).astype(np.int64)
        cpa = r.array("<i4", n_cpa * 3).astype(np.int64).reshape(n_cpa, 3)
        (tta,) = r.unpack("<i")
        entries.append((ColumnGraph(tid, features, edges, column_index), GraphLabels(cta, cpa, int(tta))))
    if r.pos != len(r.blob):
        raise PoolMismatchError(f"{path}: {len(r.blob) - r.pos} trailing bytes")
    meta.pop("count", None)
    return GraphPool(tuple(entries), meta)
