from __future__ import annotations
import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .errors import ArgumentError, DatasetParseError, LabelValidationError
from .validators import TableRecord

EMPTY_SENTINEL = "[EMPTY]"
SPLITS = ("train", "valid", "test")

logger = logging.getLogger(__name__)


class Task(str, Enum):
    CTA = "cta"
    CPA = "cpa"
    TTA = "tta"

    @classmethod
    def parse(cls, value: "str | Task") -> "Task":
        try:
            return cls(str(getattr(value, "value", value)).lower())
        except ValueError:
            raise ArgumentError(f"Unknown task '{value}'. Expected one of: cta, cpa, tta") from None


def is_null(cell: Optional[str]) -> bool:
    return cell is None or cell == ""


# ---- Data model --------------------------------------------------------------

@dataclass(frozen=True)
class Column:
    cells: Tuple[Optional[str], ...]

    def non_null(self) -> List[str]:
        return [c for c in self.cells if not is_null(c)]


@dataclass(frozen=True)
class Table:
    table_id: str
    columns: Tuple[Column, ...]

    def __post_init__(self):
        if not self.columns:
            raise ArgumentError(f"Table '{self.table_id}' has no columns")
        rows = {len(c.cells) for c in self.columns}
        if len(rows) != 1:
            raise ArgumentError(f"Table '{self.table_id}' has columns of differing row count: {sorted(rows)}")
        if rows.pop() < 1:
            raise ArgumentError(f"Table '{self.table_id}' has no rows")

    @property
    def n(self) -> int:
        return len(self.columns)

    @property
    def n_rows(self) -> int:
        return len(self.columns[0].cells)

    @classmethod
    def from_cells(cls, table_id: str, columns: Sequence[Sequence[Optional[str]]]) -> "Table":
        return cls(table_id, tuple(Column(tuple(col)) for col in columns))


@dataclass(frozen=True)
class LabelSpace:
    task: Task
    labels: Tuple[str, ...]
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            dupes = sorted({l for l in self.labels if self.labels.count(l) > 1})
            raise ArgumentError(f"{self.task.value} label space has duplicate labels: {dupes}")
        object.__setattr__(self, "index", {label: i for i, label in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self.index

    def ordinal(self, label: str) -> int:
        return self.index[label]

    @property
    def fingerprint(self) -> str:
        payload = self.task.value + "\n" + "\n".join(self.labels)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_file(cls, path: Path, task: Task) -> "LabelSpace":
        if not path.exists():
            raise DatasetParseError(str(path), None, "label file not found")
        labels: List[str] = []
        for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            label = raw.strip()
            if not label:
                continue
            if label in labels:
                raise DatasetParseError(str(path), lineno, f"duplicate label '{label}'")
            labels.append(label)
        if not labels:
            raise DatasetParseError(str(path), None, "label file is empty")
        return cls(task, tuple(labels))


@dataclass(frozen=True)
class AnnotatedTable:
    table: Table
    cta: Optional[Tuple[Optional[str], ...]] = None
    cpa: Optional[Tuple[Tuple[int, int, str], ...]] = None
    tta: Optional[str] = None

    def __post_init__(self):
        n = self.table.n
        if self.cta is not None and len(self.cta) != n:
            raise ArgumentError(f"Table '{self.table.table_id}': {len(self.cta)} CTA labels for {n} columns")
        for i, j, _ in self.cpa or ():
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ArgumentError(f"Table '{self.table.table_id}': invalid CPA pair ({i}, {j}) for {n} columns")

    @property
    def table_id(self) -> str:
        return self.table.table_id

    def labels_for(self, task: Task) -> List[str]:
        if task is Task.CTA:
            return [l for l in self.cta or () if l is not None]
        if task is Task.CPA:
            return [l for _, _, l in self.cpa or ()]
        return [self.tta] if self.tta is not None else []


@dataclass(frozen=True)
class Dataset:
    train: Tuple[AnnotatedTable, ...]
    valid: Tuple[AnnotatedTable, ...]
    test: Tuple[AnnotatedTable, ...]
    label_spaces: Mapping[Task, LabelSpace]

    def split(self, name: str) -> Tuple[AnnotatedTable, ...]:
        if name not in SPLITS:
            raise ArgumentError(f"Unknown split '{name}'. Expected one of: {', '.join(SPLITS)}")
        return getattr(self, name)

    def label_space(self, task: Task) -> LabelSpace:
        if task not in self.label_spaces:
            raise ArgumentError(f"Dataset has no {task.value} label space")
        return self.label_spaces[task]


# ---- Sampling ----------------------------------------------------------------

def sample_column_values(column: Column, m: int, seed: int) -> List[str]:
    """Uniformly sample m non-null cells without replacement, keeping row order."""
    if m < 1:
        raise ArgumentError(f"m must be >= 1, got {m}")
    values = column.non_null()
    if not values:
        return [EMPTY_SENTINEL]
    if len(values) <= m:
        return values
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(len(values), size=m, replace=False))
    return [values[i] for i in picked]


# ---- Ingestion ---------------------------------------------------------------

def _parse_record(path: Path, lineno: int, raw: str,
                  label_spaces: Mapping[Task, LabelSpace]) -> AnnotatedTable:
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as e:
        raise DatasetParseError(str(path), lineno, f"malformed JSON ({e.msg})") from None
    try:
        record = TableRecord.model_validate(payload)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise DatasetParseError(str(path), lineno, f"invalid record at '{loc}': {first['msg']}") from None
    try:
        table = Table.from_cells(record.table_id, record.columns)
    except ArgumentError as e:
        raise DatasetParseError(str(path), lineno, str(e)) from None

    cta = tuple(record.cta) if record.cta is not None and Task.CTA in label_spaces else None
    cpa = tuple((i, j, l) for i, j, l in record.cpa) if record.cpa is not None and Task.CPA in label_spaces else None
    tta = record.tta if Task.TTA in label_spaces else None
    try:
        annotated = AnnotatedTable(table, cta=cta, cpa=cpa, tta=tta)
    except ArgumentError as e:
        raise DatasetParseError(str(path), lineno, str(e)) from None

    for task, space in label_spaces.items():
        for label in annotated.labels_for(task):
            if label not in space:
                raise LabelValidationError(table.table_id, label, task.value)
    return annotated


def _read_split(path: Path, label_spaces: Mapping[Task, LabelSpace]) -> Tuple[AnnotatedTable, ...]:
    if not path.exists():
        return ()
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            out.append(_parse_record(path, lineno, raw, label_spaces))
    return tuple(out)


def load_dataset(path: "str | Path", task: "Task | str | None" = None) -> Dataset:
    """
    Load the directory layout: labels_{cta,cpa,tta}.txt + {train,valid,test}.jsonl.
    With a task, that label file is required and only its labels are kept;
    without one, every label file present is loaded.
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetParseError(str(root), None, "dataset directory not found")

    if task is not None:
        t = Task.parse(task)
        label_spaces = {t: LabelSpace.from_file(root / f"labels_{t.value}.txt", t)}
    else:
        label_spaces = {t: LabelSpace.from_file(root / f"labels_{t.value}.txt", t)
                        for t in Task if (root / f"labels_{t.value}.txt").exists()}
        if not label_spaces:
            raise DatasetParseError(str(root / "labels_cta.txt"), None, "label file not found")

    train_path = root / "train.jsonl"
    if not train_path.exists():
        raise DatasetParseError(str(train_path), None, "train split not found")
    splits = {name: _read_split(root / f"{name}.jsonl", label_spaces) for name in SPLITS}
    if not splits["train"]:
        raise DatasetParseError(str(train_path), None, "train split is empty")

    ds = Dataset(splits["train"], splits["valid"], splits["test"], label_spaces)
    logger.info(f"Loaded {root.name}: " + ", ".join(f"{k}={len(v)}" for k, v in splits.items())
                + f" tables; tasks={[t.value for t in label_spaces]}")
    return ds


# ---- Serialization -----------------------------------------------------------

def record_of(item: AnnotatedTable) -> Dict[str, object]:
    return {
        "table_id": item.table.table_id,
        "columns": [list(c.cells) for c in item.table.columns],
        "cta": list(item.cta) if item.cta is not None else None,
        "cpa": [[i, j, l] for i, j, l in item.cpa] if item.cpa is not None else None,
        "tta": item.tta,
    }


def write_dataset(dataset: Dataset, path: "str | Path") -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for task, space in dataset.label_spaces.items():
        (root / f"labels_{task.value}.txt").write_text("\n".join(space.labels) + "\n", encoding="utf-8")
    for name in SPLITS:
        lines = [json.dumps(record_of(item), ensure_ascii=False) for item in dataset.split(name)]
        (root / f"{name}.jsonl").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return root


def dataset_fingerprint(path: "str | Path") -> str:
    """Content hash of the label files and splits, used in pool config hashes."""
    root = Path(path)
    h = hashlib.sha256()
    for name in [f"labels_{t.value}.txt" for t in Task] + [f"{s}.jsonl" for s in SPLITS]:
        p = root / name
        if p.exists():
            h.update(name.encode("utf-8"))
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


# ---- Profiling ---------------------------------------------------------------

def dataset_summary(dataset: Dataset) -> pd.DataFrame:
    """Per task: class count, tables and supervised targets per split, mean table shape."""
    rows = []
    for task, space in dataset.label_spaces.items():
        row: Dict[str, object] = {"task": task.value, "classes": len(space)}
        for name in SPLITS:
            items = [t for t in dataset.split(name) if t.labels_for(task)]
            row[f"{name}_tables"] = len(items)
            row[f"{name}_targets"] = sum(len(t.labels_for(task)) for t in items)
        everything: Iterable[AnnotatedTable] = dataset.train + dataset.valid + dataset.test
        shapes = [(t.table.n, t.table.n_rows) for t in everything]
        row["mean_columns"] = float(np.mean([s[0] for s in shapes])) if shapes else 0.0
        row["mean_rows"] = float(np.mean([s[1] for s in shapes])) if shapes else 0.0
        rows.append(row)
    return pd.DataFrame(rows)
