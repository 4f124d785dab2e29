from __future__ import annotations
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .autograd import no_grad
from .colgraph import GraphPool
from .config import SweepConfig, TrainConfig, Variant
from .errors import ArgumentError, TabEmbError
from .layers import struct_embedding
from .pipeline import TrainedModel, evaluate, train
from .tables import Dataset, LabelSpace, Task
from .validators import validate_report

logger = logging.getLogger(__name__)


# ---- Attention heatmap -------------------------------------------------------

@dataclass
class HeatmapMatrix:
    """
    entry (a, b): first-layer attention (averaged over heads) that columns of
    class a give to columns of class b, divided by the number of class-a columns.
    Class pairs that never share a graph edge are NaN (absent), not zero.
    """
    labels: Tuple[str, ...]
    values: np.ndarray
    edge_counts: np.ndarray
    node_counts: np.ndarray

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=list(self.labels), columns=list(self.labels))


def attention_heatmap(model: TrainedModel, pool: GraphPool) -> HeatmapMatrix:
    if model.gnn.variant is not Variant.GAT:
        raise ArgumentError(f"attention heatmap needs a GAT model, got {model.gnn.variant.value}")
    if model.task is not Task.CTA:
        raise ArgumentError("attention heatmap needs a CTA model (class names come from its labels)")
    c = len(model.labels)
    mass = np.zeros((c, c))
    edges = np.zeros((c, c), dtype=np.int64)
    nodes = np.zeros(c, dtype=np.int64)
    used = 0
    for graph, labels in pool.entries:
        cls = labels.cta
        if len(cls) == 0 or (cls < 0).any():
            continue
        attention: List[np.ndarray] = []
        with no_grad():
            model.gnn.forward(graph.features, graph, attention=attention)
        alpha = attention[0].mean(axis=1)
        idx = graph.index
        np.add.at(mass, (cls[idx.dst], cls[idx.src]), alpha)
        np.add.at(edges, (cls[idx.dst], cls[idx.src]), 1)
        nodes += np.bincount(cls, minlength=c)
        used += 1
    if not used:
        raise ArgumentError("no fully CTA-labeled graphs in the pool")

    with np.errstate(invalid="ignore", divide="ignore"):
        values = mass / nodes[:, None]
    values[edges == 0] = np.nan
    logger.info(f"Attention heatmap aggregated over {used} graphs")
    return HeatmapMatrix(tuple(model.labels), values, edges, nodes)


# ---- Ablation / sensitivity sweep --------------------------------------------

PoolSource = Callable[[int], Tuple[GraphPool, Optional[GraphPool], GraphPool]]


@dataclass(frozen=True)
class SweepCell:
    axis: str
    value: str
    config: TrainConfig


def sweep_cells(base: TrainConfig, sweep: SweepConfig) -> List[SweepCell]:
    """One axis at a time; every other setting stays at the base value."""
    cells = []
    for axis in sweep.axes:
        if axis == "variant":
            cells += [SweepCell(axis, v.value, base.model_copy(update={"variant": v})) for v in sweep.variants]
        elif axis == "depth":
            cells += [SweepCell(axis, str(s), base.model_copy(update={"layers": s})) for s in sweep.depths]
        else:
            cells += [SweepCell(axis, str(m), base.model_copy(update={"m": m})) for m in sweep.ms]
    return cells


def _run_cell(dataset: Dataset, cell: SweepCell, tasks: Sequence[Task], pools: PoolSource) -> List[Dict[str, object]]:
    train_pool, valid_pool, test_pool = pools(cell.config.m)
    rows = []
    for task in tasks:
        cfg = cell.config.model_copy(update={"task": task})
        started = time.perf_counter()
        row: Dict[str, object] = {"axis": cell.axis, "value": cell.value, "task": task.value, "seed": cfg.seed}
        try:
            model = train(dataset, cfg, train_pool, valid_pool)
            row["micro_f1"] = evaluate(model, test_pool).report.micro_f1
            row["status"] = "ok"
        except TabEmbError as e:
            logger.error(f"Sweep cell {cell.axis}={cell.value} ({task.value}) failed: {e}")
            row["micro_f1"] = np.nan
            row["status"] = f"failed: {e}"
        row["seconds"] = time.perf_counter() - started
        rows.append(row)
    return rows


def run_ablation_sweep(dataset: Dataset, base: TrainConfig, sweep: SweepConfig, pools: PoolSource,
                       jobs: int = 1, progress: bool = False) -> pd.DataFrame:
    """
    Train and test every cell of the sweep. Returns one row per configuration with
    a micro_f1_<task> column per task, seed, total seconds and a status; a failing
    cell is marked in its status and the sweep carries on.
    `pools(m)` returns (train, valid or None, test) pools for sampling size m.
    """
    tasks = [t for t in sweep.tasks if t in dataset.label_spaces]
    if not tasks:
        raise ArgumentError("dataset has none of the sweep's tasks")
    cells = sweep_cells(base, sweep)
    for m in sorted({c.config.m for c in cells}):
        pools(m)

    bar = tqdm(total=len(cells), desc="sweep", disable=not progress)
    def _one(cell: SweepCell) -> List[Dict[str, object]]:
        rows = _run_cell(dataset, cell, tasks, pools)
        bar.update()
        return rows
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_one, cells))
    else:
        results = [_one(c) for c in cells]
    bar.close()

    long = pd.DataFrame([r for rows in results for r in rows])
    try:
        validate_report(long, "sweep")
    except Exception:
        logger.warning("Sweep validation failed; continuing with report.")

    grid = []
    for cell, rows in zip(cells, results):
        entry: Dict[str, object] = {"axis": cell.axis, "value": cell.value, "seed": cell.config.seed}
        for r in rows:
            entry[f"micro_f1_{r['task']}"] = r["micro_f1"]
        entry["seconds"] = sum(r["seconds"] for r in rows)
        failed = [r["status"] for r in rows if r["status"] != "ok"]
        entry["status"] = "; ".join(failed) if failed else "ok"
        grid.append(entry)
    logger.info(f"Sweep finished: {len(grid)} configurations, {sum(e['status'] != 'ok' for e in grid)} failed")
    return pd.DataFrame(grid)


# ---- Embedding export --------------------------------------------------------

def export_embeddings(model: TrainedModel, pool: GraphPool,
                      cta_labels: Optional[LabelSpace] = None) -> pd.DataFrame:
    """Rows of (table_id, column, stage, label, vector) for psi0 and refined psi."""
    if cta_labels is None and model.task is Task.CTA:
        cta_labels = model.label_space
    rows = []
    for graph, labels in pool.entries:
        refined = struct_embedding(model.gnn, graph)
        for node in range(graph.n):
            ordinal = int(labels.cta[node])
            label = cta_labels.labels[ordinal] if cta_labels is not None and ordinal >= 0 else ""
            column = int(graph.column_index[node])
            for stage, vector in (("initial", graph.features[node]), ("refined", refined[node].vector)):
                rows.append({"table_id": graph.table_id, "column": column, "stage": stage, "label": label,
                             "vector": " ".join(repr(float(x)) for x in vector)})
    return pd.DataFrame(rows, columns=["table_id", "column", "stage", "label", "vector"])
