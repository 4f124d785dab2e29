from __future__ import annotations
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .autograd import Tensor, cross_entropy, no_grad
from .cache import EmbeddingCache
from .checkpoint import read_checkpoint, write_checkpoint
from .colgraph import GraphBatch, GraphLabels, GraphPool, batch_graphs, construct_graph
from .config import TrainConfig, Variant, config_hash
from .embedding import EmbeddingBackend, column_embeddings
from .errors import ArgumentError, CheckpointError, PoolMismatchError, TrainingError
from .evaluation import EvalReport, micro_f1, per_class_report
from .layers import GnnModel, TaskHead, head_forward, named_parameters, parameters_digest
from .optim import AdamState, adam_step
from .tables import Dataset, LabelSpace, Table, Task

logger = logging.getLogger(__name__)


def _setup_logger(verbose: bool = False) -> logging.Logger:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s', datefmt='%Y-%m-%d %H:%M:%S')
    return logging.getLogger(__name__)


# ---- Model -------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    valid_f1: Optional[float]
    param_hash: str
    steps: int


@dataclass
class TrainingHistory:
    records: List[EpochRecord] = field(default_factory=list)
    selected_epoch: Optional[int] = None
    seconds: float = 0.0

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.records],
                            columns=["epoch", "loss", "valid_f1", "param_hash", "steps"])


@dataclass
class TrainedModel:
    gnn: GnnModel
    head: TaskHead
    task: Task
    labels: Tuple[str, ...]
    backend_id: str
    config: TrainConfig
    history: Optional[TrainingHistory] = None

    @property
    def label_space(self) -> LabelSpace:
        return LabelSpace(self.task, self.labels)

    @property
    def label_fingerprint(self) -> str:
        return self.label_space.fingerprint

    @property
    def config_hash(self) -> str:
        return config_hash(self.config, self.backend_id, self.label_fingerprint)

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return named_parameters(self.gnn, self.head)

    def param_hash(self) -> str:
        return parameters_digest(self.named_parameters())


# ---- Supervision -------------------------------------------------------------

def batch_logits(model: GnnModel, head: TaskHead, entries: Sequence[Tuple["object", GraphLabels]],
                 batch: GraphBatch) -> Tuple[Tensor, np.ndarray]:
    """Logits and gold ordinals for every labeled target of the batch's graphs."""
    psi = model.forward(batch.features, batch)
    task = head.task
    if task is Task.CTA:
        nodes = [np.flatnonzero(lab.cta >= 0) + off for (_, lab), off in zip(entries, batch.offsets)]
        gold = np.concatenate([lab.cta[lab.cta >= 0] for _, lab in entries])
        return head_forward(head, psi, np.concatenate(nodes)), gold
    if task is Task.CPA:
        pairs = np.concatenate([lab.cpa[:, :2] + off for (_, lab), off in zip(entries, batch.offsets)])
        gold = np.concatenate([lab.cpa[:, 2] for _, lab in entries])
        return head_forward(head, psi, pairs), gold
    labeled = np.array([i for i, (_, lab) in enumerate(entries) if lab.tta >= 0], dtype=np.int64)
    gold = np.array([entries[i][1].tta for i in labeled], dtype=np.int64)
    return head_forward(head, psi, batch.pooling).gather(labeled), gold


def _supervised(pool: GraphPool, task: Task) -> List[Tuple["object", GraphLabels]]:
    return [e for e in pool.entries if e[1].has(task)]


def _check_pool(pool: GraphPool, space: LabelSpace, what: str) -> None:
    fp = dict(pool.meta.get("label_fingerprints") or {}).get(space.task.value)
    if fp is not None and fp != space.fingerprint:
        raise PoolMismatchError(f"{what} pool was built with a different {space.task.value} label space "
                                f"({fp} vs {space.fingerprint})")
    for graph, lab in pool.entries:
        ordinals = {Task.CTA: lab.cta, Task.CPA: lab.cpa[:, 2], Task.TTA: np.array([lab.tta])}[space.task]
        if len(ordinals) and ordinals.max() >= len(space):
            raise ArgumentError(f"Table '{graph.table_id}': {space.task.value} label ordinal "
                                f"{int(ordinals.max())} is outside the label space of {len(space)}")


# ---- Training ----------------------------------------------------------------

def train(dataset: Dataset, config: TrainConfig, pool: GraphPool, valid_pool: Optional[GraphPool] = None,
          progress: bool = False) -> TrainedModel:
    """
    Mini-batch training of GNN + head on a precomputed pool. The per-batch loss is the
    mean cross-entropy over all labeled targets in the batch. With a validation pool
    the parameters of the epoch with the best validation micro-F1 (earliest on ties)
    are returned, otherwise those of the final epoch.
    """
    task = config.task
    space = dataset.label_space(task)
    if len(pool) == 0:
        raise ArgumentError("cannot train on an empty graph pool")
    _check_pool(pool, space, "training")
    if valid_pool is not None:
        _check_pool(valid_pool, space, "validation")
    entries = _supervised(pool, task)
    if not entries:
        raise ArgumentError(f"training pool has no {task.value} targets")

    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    in_dim = entries[0][0].dim
    gnn = GnnModel.initialize(config.variant, in_dim, config.hidden, config.layers, config.heads, rng)
    head = TaskHead.initialize(task, config.hidden, len(space), rng)
    model = TrainedModel(gnn, head, task, space.labels, str(pool.meta.get("backend_id", "unknown")), config)
    named = model.named_parameters()
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    history = TrainingHistory()

    mode = "ablation (no message passing)" if config.variant is Variant.NONE else config.variant.value
    logger.info(f"Training {task.value} on {len(entries)} tables: variant={mode}, layers={config.layers}, "
                f"hidden={config.hidden}, epochs={config.epochs}, batch={config.batch_size}")

    best_f1, best_params = None, None
    for epoch in tqdm(range(1, config.epochs + 1), desc=f"train {task.value}", disable=not progress):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(entries))
        losses = []
        for b, start in enumerate(range(0, len(entries), config.batch_size)):
            chunk = [entries[i] for i in order[start:start + config.batch_size]]
            logits, gold = batch_logits(gnn, head, chunk, batch_graphs([g for g, _ in chunk]))
            if len(gold) == 0:
                continue
            loss = cross_entropy(logits, gold)
            if not np.isfinite(loss.data):
                raise TrainingError("non-finite loss", epoch=epoch, batch=b)
            for _, p in named:
                p.zero_grad()
            loss.backward()
            adam_step(state, named)
            losses.append(float(loss.data))

        valid_f1 = None
        if valid_pool is not None and _supervised(valid_pool, task):
            valid_f1 = evaluate(model, valid_pool).report.micro_f1
        record = EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"), valid_f1,
                             model.param_hash(), state.step)
        history.records.append(record)
        logger.debug(f"epoch {epoch}: loss={record.loss:.4f} valid_f1={valid_f1} steps={state.step}")
        if valid_f1 is not None and (best_f1 is None or valid_f1 > best_f1):
            best_f1, history.selected_epoch = valid_f1, epoch
            best_params = {name: p.data.copy() for name, p in named}

    if best_params is not None:
        for name, p in named:
            p.data = best_params[name]
        logger.info(f"Selected epoch {history.selected_epoch} (validation micro-F1 {best_f1:.4f})")
    else:
        history.selected_epoch = config.epochs
    for _, p in named:
        p.zero_grad()
    history.seconds = time.perf_counter() - started
    model.history = history
    logger.info(f"Training finished in {history.seconds:.1f}s after {state.step} optimizer steps")
    return model


# ---- Evaluation / prediction -------------------------------------------------

@dataclass
class Evaluation:
    report: EvalReport
    predictions: List[str]
    golds: List[str]


def predict_ordinals(model: TrainedModel, pool: GraphPool, batch_size: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    entries = _supervised(pool, model.task)
    preds, golds = [], []
    with no_grad():
        for start in range(0, len(entries), batch_size):
            chunk = entries[start:start + batch_size]
            logits, gold = batch_logits(model.gnn, model.head, chunk, batch_graphs([g for g, _ in chunk]))
            preds.append(np.argmax(logits.data, axis=1))
            golds.append(gold)
    if not preds:
        raise ArgumentError(f"pool has no {model.task.value} targets to evaluate")
    return np.concatenate(preds), np.concatenate(golds)


def evaluate(model: TrainedModel, pool: GraphPool) -> Evaluation:
    pred, gold = predict_ordinals(model, pool, model.config.batch_size)
    labels = model.labels
    predictions = [labels[i] for i in pred]
    golds = [labels[i] for i in gold]
    return Evaluation(per_class_report(predictions, golds, labels), predictions, golds)


@dataclass
class Prediction:
    table_id: str
    task: Task
    labels: List[str]
    logits: np.ndarray
    pairs: Optional[List[Tuple[int, int]]] = None

    def record(self) -> Dict[str, object]:
        """JSON record mirroring the dataset's label fields."""
        if self.task is Task.CTA:
            return {"table_id": self.table_id, "cta": self.labels}
        if self.task is Task.CPA:
            return {"table_id": self.table_id, "cpa": [[i, j, l] for (i, j), l in zip(self.pairs, self.labels)]}
        return {"table_id": self.table_id, "tta": self.labels[0]}


def predict(table: Table, model: TrainedModel, backend: EmbeddingBackend, cache: Optional[EmbeddingCache] = None,
            pairs: Optional[Sequence[Tuple[int, int]]] = None, allow_backend_mismatch: bool = False) -> Prediction:
    """Embed -> build graph -> refine -> classify. Argmax ties go to the lowest ordinal."""
    if backend.backend_id != model.backend_id:
        msg = f"backend '{backend.backend_id}' differs from the model's '{model.backend_id}'"
        if not allow_backend_mismatch:
            raise ArgumentError(msg)
        logger.warning(msg + "; proceeding")

    cfg = model.config
    psi0 = column_embeddings(table, backend, cfg.m, cfg.seed, cache)
    graph = construct_graph(table, psi0, cfg.block_size)
    if model.task is Task.CTA:
        target = np.arange(table.n)
    elif model.task is Task.CPA:
        if pairs is None:
            pairs = [(i, j) for i in range(table.n) for j in range(table.n) if i != j]
        pairs = [(int(i), int(j)) for i, j in pairs]
        for i, j in pairs:
            if not (0 <= i < table.n and 0 <= j < table.n):
                raise ArgumentError(f"Table '{table.table_id}': pair ({i}, {j}) is out of range for {table.n} columns")
        target = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    else:
        target = graph.pooling

    with no_grad():
        psi = model.gnn.forward(graph.features, graph)
        logits = head_forward(model.head, psi, target).data
    labels = [model.labels[i] for i in np.argmax(logits, axis=1)]
    return Prediction(table.table_id, model.task, labels, logits, list(pairs) if pairs is not None else None)


def predict_tables(tables: Sequence[Table], model: TrainedModel, backend: EmbeddingBackend,
                   cache: Optional[EmbeddingCache] = None, pairs: Optional[Dict[str, List[Tuple[int, int]]]] = None,
                   allow_backend_mismatch: bool = False, progress: bool = False) -> Tuple[List[Prediction], float]:
    """Predict every table in order; also returns mean seconds per table."""
    started = time.perf_counter()
    out = [predict(t, model, backend, cache, (pairs or {}).get(t.table_id), allow_backend_mismatch)
           for t in tqdm(tables, desc="predict", disable=not progress)]
    latency = (time.perf_counter() - started) / max(len(tables), 1)
    logger.info(f"Predicted {len(out)} tables ({latency * 1000:.1f} ms per table)")
    return out, latency


# ---- Cross-validation --------------------------------------------------------

@dataclass
class CrossValidation:
    fold_f1: List[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_f1))


def cross_validate(dataset: Dataset, config: TrainConfig, pool: GraphPool, folds: int = 5,
                   progress: bool = False) -> CrossValidation:
    """k-fold protocol over the pool's labeled tables (for datasets without fixed splits)."""
    labeled = [i for i, e in enumerate(pool.entries) if e[1].has(config.task)]
    if folds < 2 or len(labeled) < folds:
        raise ArgumentError(f"{folds}-fold cross-validation needs at least {max(folds, 2)} labeled tables, "
                            f"got {len(labeled)}")
    order = np.random.default_rng(config.seed).permutation(labeled)
    parts = np.array_split(order, folds)
    scores = []
    for k, held_out in enumerate(parts):
        rest = np.concatenate([p for j, p in enumerate(parts) if j != k])
        model = train(dataset, config, pool.subset(rest.tolist()), progress=progress)
        scores.append(evaluate(model, pool.subset(held_out.tolist())).report.micro_f1)
        logger.info(f"fold {k + 1}/{folds}: micro-F1 {scores[-1]:.4f}")
    return CrossValidation(scores)


# ---- Persistence -------------------------------------------------------------

def save_model(model: TrainedModel, path: "str | Path") -> Path:
    header = {
        "config": model.config.model_dump(mode="json"),
        "config_hash": model.config_hash,
        "variant": model.gnn.variant.value,
        "layers": model.gnn.layers,
        "hidden": model.gnn.hidden,
        "heads": model.gnn.heads,
        "in_dim": model.gnn.in_dim,
        "backend_id": model.backend_id,
        "task": model.task.value,
        "labels": list(model.labels),
        "label_fingerprint": model.label_fingerprint,
    }
    return write_checkpoint(path, header, [(name, p.data) for name, p in model.named_parameters()])


def load_model(path: "str | Path", label_space: Optional[LabelSpace] = None) -> TrainedModel:
    header, arrays = read_checkpoint(path)
    try:
        config = TrainConfig.model_validate(header["config"])
        task = Task.parse(header["task"])
        labels = tuple(header["labels"])
        variant = Variant(header["variant"])
        dims = (int(header["in_dim"]), int(header["hidden"]), int(header["layers"]), int(header["heads"]))
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: malformed header ({e})") from None

    space = LabelSpace(task, labels)
    if space.fingerprint != header.get("label_fingerprint"):
        raise CheckpointError(f"{path}: label list does not match its stored fingerprint")
    if label_space is not None and label_space.fingerprint != space.fingerprint:
        raise CheckpointError(f"{path}: checkpoint label space {space.fingerprint} does not match "
                              f"{label_space.task.value} labels {label_space.fingerprint}")

    rng = np.random.default_rng(0)
    gnn = GnnModel.initialize(variant, *dims, rng)
    head = TaskHead.initialize(task, dims[1], len(labels), rng)
    model = TrainedModel(gnn, head, task, labels, header["backend_id"], config)
    expected = model.named_parameters()
    if [n for n, _ in expected] != [n for n, _ in arrays]:
        raise CheckpointError(f"{path}: parameter names do not match a {variant.value} model")
    for (name, p), (_, values) in zip(expected, arrays):
        if p.data.shape != values.shape:
            raise CheckpointError(f"{path}: parameter '{name}' has shape {values.shape}, expected {p.data.shape}")
        p.data = values
    if model.config_hash != header.get("config_hash"):
        raise CheckpointError(f"{path}: config hash mismatch")
    logger.info(f"Loaded {variant.value} {task.value} model from {path} ({len(labels)} labels)")
    return model
