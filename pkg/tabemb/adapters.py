from __future__ import annotations
import json
import logging
from pathlib import Path
from typing import Dict, List

import pandas as pd
from pydantic import ValidationError

from .errors import ArgumentError, DatasetParseError
from .tables import Table
from .validators import TableRecord

logger = logging.getLogger(__name__)


# ---- Registry Pattern -------------------------------------------------------

class BaseIngestor:
    def __init__(self, location: str):
        self.path = Path(location).expanduser()

    def load(self) -> List[Table]: ...


REGISTRY: Dict[str, type[BaseIngestor]] = {}


def register(name: str):
    def _wrap(cls):
        REGISTRY[name] = cls
        return cls
    return _wrap


def get_ingestor(spec: str) -> BaseIngestor:
    """
    Spec examples:
      - "jsonl:data/test.jsonl"   (split-file records; label fields are ignored)
      - "csv:tables/"             (one headerless CSV per table, table_id = file stem)
      - "tables/" or "x.jsonl"    (plain path: directory -> csv, file -> jsonl)
    """
    kind, rest = spec.split(":", 1) if ":" in spec else ("", spec)
    if kind in REGISTRY:
        return REGISTRY[kind](rest)
    if kind and len(kind) > 1:
        raise ArgumentError(f"Unknown source '{kind}'. Registered: {list(REGISTRY)}")
    path = Path(spec).expanduser()
    return REGISTRY["csv" if path.is_dir() else "jsonl"](spec)


def load_tables(spec: str) -> List[Table]:
    tables = get_ingestor(spec).load()
    logger.info(f"Ingested {len(tables)} tables from {spec}")
    return tables


# ---- JSONL records ------------------------------------------------------------

@register("jsonl")
class JsonlIngestor(BaseIngestor):
    def load(self) -> List[Table]:
        if not self.path.exists():
            raise DatasetParseError(str(self.path), None, "input file not found")
        out = []
        with self.path.open(encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    record = TableRecord.model_validate(json.loads(raw))
                    out.append(Table.from_cells(record.table_id, record.columns))
                except json.JSONDecodeError as e:
                    raise DatasetParseError(str(self.path), lineno, f"malformed JSON ({e.msg})") from None
                except ValidationError as e:
                    loc = ".".join(str(p) for p in e.errors()[0]["loc"])
                    raise DatasetParseError(str(self.path), lineno, f"invalid record at '{loc}'") from None
                except ArgumentError as e:
                    raise DatasetParseError(str(self.path), lineno, str(e)) from None
        return out


# ---- Directory of CSV files -----------------------------------------------------

@register("csv")
class CsvDirIngestor(BaseIngestor):
    def load(self) -> List[Table]:
        if not self.path.is_dir():
            raise DatasetParseError(str(self.path), None, "input directory not found")
        out = []
        for p in sorted(self.path.glob("*.csv")):
            try:
                df = pd.read_csv(p, header=None, dtype=str, keep_default_na=False, encoding="utf-8")
            except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
                raise DatasetParseError(str(p), None, f"unreadable CSV ({e})") from None
            columns = [[None if v == "" else v for v in df[c].tolist()] for c in df.columns]
            try:
                out.append(Table.from_cells(p.stem, columns))
            except ArgumentError as e:
                raise DatasetParseError(str(p), None, str(e)) from None
        return out
