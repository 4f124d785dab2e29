from __future__ import annotations
import logging
from typing import List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)


class TableRecord(BaseModel):
    """One line of a split JSONL file. Columns are column-major."""
    model_config = ConfigDict(extra="ignore")

    table_id: str = Field(min_length=1)
    columns: List[List[Optional[str]]] = Field(min_length=1)
    cta: Optional[List[Optional[str]]] = None
    cpa: Optional[List[Tuple[int, int, str]]] = None
    tta: Optional[str] = None


def _schemas():
    import pandera.pandas as pa
    import pandera.typing as pat

    class PerClassSchema(pa.DataFrameModel):
        label: pat.Series[str]
        f1: pat.Series[float] = pa.Field(ge=0.0, le=1.0, nullable=True)
        precision: pat.Series[float] = pa.Field(ge=0.0, le=1.0, nullable=True)
        recall: pat.Series[float] = pa.Field(ge=0.0, le=1.0, nullable=True)
        support: pat.Series[int] = pa.Field(ge=0)
        class Config: coerce = True

    class SweepSchema(pa.DataFrameModel):
        axis: pat.Series[str]
        value: pat.Series[str]
        task: pat.Series[str]
        micro_f1: pat.Series[float] = pa.Field(ge=0.0, le=1.0, nullable=True)
        seconds: pat.Series[float] = pa.Field(ge=0.0, nullable=True)
        class Config: coerce = True

    return {"per_class": PerClassSchema, "sweep": SweepSchema}


def validate_report(df: pd.DataFrame, kind: str) -> None:
    """
    Optional Pandera validation for report frames ('per_class' or 'sweep').
    Silently no-op if pandera isn't installed.
    """
    try:
        schema = _schemas()[kind]
        schema.validate(df, lazy=True)
    except ImportError:
        logger.info("Pandera not installed; skipping validation.")
    except KeyError:
        raise ValueError(f"Unknown report kind '{kind}'") from None
    except Exception as e:
        logger.error(f"Validation failed: {e}")
        raise
