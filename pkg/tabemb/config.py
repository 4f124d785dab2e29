from __future__ import annotations
import hashlib
import json
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .tables import Task

CACHE_DIR_ENV = "TABEMB_CACHE_DIR"
API_KEY_ENV = "TABEMB_EMBED_API_KEY"


class Variant(str, Enum):
    NONE = "none"
    GAT = "gat"
    GCN = "gcn"
    GGNN = "ggnn"


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=False)


class BackendConfig(_Frozen):
    kind: Literal["local", "remote"] = "local"
    dim: int = Field(128, ge=8)
    base_url: Optional[str] = None
    model: Optional[str] = None
    api_key_env: str = API_KEY_ENV
    timeout: float = Field(30.0, gt=0)
    request_size: int = Field(64, ge=1)

    @model_validator(mode="after")
    def _remote_needs_endpoint(self):
        if self.kind == "remote" and (not self.base_url or not self.model):
            raise ValueError("remote backend needs base_url and model")
        return self


class TrainConfig(_Frozen):
    task: Task = Task.CTA
    epochs: int = Field(100, ge=1)
    batch_size: int = Field(256, ge=1)
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(5e-4, ge=0)
    m: int = Field(25, ge=1)
    layers: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    hidden: int = Field(256, ge=1)
    variant: Variant = Variant.GAT
    seed: int = 0
    block_size: Optional[int] = Field(None, ge=2)

    @model_validator(mode="after")
    def _heads_divide_hidden(self):
        if self.variant is Variant.GAT and self.hidden % self.heads:
            raise ValueError(f"hidden width {self.hidden} is not divisible by {self.heads} heads")
        return self


class SynthConfig(_Frozen):
    n_train: int = Field(300, ge=1)
    n_valid: int = Field(50, ge=0)
    n_test: int = Field(100, ge=0)
    min_columns: int = Field(3, ge=2)
    max_columns: int = Field(6, ge=2)
    min_rows: int = Field(10, ge=1)
    max_rows: int = Field(30, ge=1)
    n_base_types: int = Field(6, ge=1, le=6)
    ambiguity: float = Field(0.5, ge=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _ranges(self):
        if self.min_columns > self.max_columns or self.min_rows > self.max_rows:
            raise ValueError("min must not exceed max for columns/rows")
        return self


class SweepConfig(_Frozen):
    axes: List[Literal["variant", "depth", "m"]] = ["variant", "depth", "m"]
    variants: List[Variant] = [Variant.NONE, Variant.GAT, Variant.GCN, Variant.GGNN]
    depths: List[int] = [1, 2, 3, 4]
    ms: List[int] = [5, 15, 25]
    tasks: List[Task] = [Task.CTA, Task.CPA, Task.TTA]


class PathsConfig(_Frozen):
    dataset: Optional[Path] = None
    cache_dir: Path = Field(default_factory=lambda: Path(os.environ.get(CACHE_DIR_ENV, ".tabemb_cache")))
    pool_dir: Optional[Path] = None
    checkpoint: Optional[Path] = None
    report_dir: Path = Path("reports")

    def pools(self) -> Path:
        return self.pool_dir or (self.cache_dir / "pools")


class RunConfig(_Frozen):
    train: TrainConfig = TrainConfig()
    backend: BackendConfig = BackendConfig()
    synth: SynthConfig = SynthConfig()
    sweep: SweepConfig = SweepConfig()
    paths: PathsConfig = PathsConfig()
    jobs: int = Field(1, ge=1)


SECTIONS = {"train": "train", "embed": "backend", "synth": "synth", "sweep": "sweep", "paths": "paths"}


def load_config_file(path: "str | Path") -> Dict[str, Any]:
    """Read a YAML config with one section per module (embed, train, synth, sweep, paths)."""
    import yaml

    p = Path(path)
    if not p.exists():
        raise ConfigError(f"Config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{p}: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a mapping of sections")
    unknown = set(raw) - set(SECTIONS) - {"jobs"}
    if unknown:
        raise ConfigError(f"{p}: unknown sections {sorted(unknown)}; expected {sorted(SECTIONS)}")
    return raw


def build_run_config(file_values: Optional[Mapping[str, Any]] = None,
                     flags: Optional[Mapping[str, Mapping[str, Any]]] = None) -> RunConfig:
    """Merge defaults < config file < command-line flags (None flags are ignored)."""
    merged: Dict[str, Dict[str, Any]] = {field: {} for field in SECTIONS.values()}
    jobs = 1
    for source in (file_values or {}, flags or {}):
        for section, values in source.items():
            if section == "jobs":
                jobs = values if values is not None else jobs
                continue
            target = SECTIONS.get(section, section)
            if target not in merged:
                raise ConfigError(f"Unknown config section '{section}'")
            merged[target].update({k: v for k, v in (values or {}).items() if v is not None})
    try:
        return RunConfig(**{k: v for k, v in merged.items()}, jobs=jobs)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"Invalid configuration at '{loc}': {first['msg']}") from None


def config_hash(*parts: Any) -> str:
    """First 12 hex chars of sha256 over the canonical JSON of the given parts."""
    def _plain(x: Any) -> Any:
        if isinstance(x, BaseModel):
            return x.model_dump(mode="json")
        if isinstance(x, Enum):
            return x.value
        if isinstance(x, Path):
            return str(x)
        return x
    blob = json.dumps([_plain(p) for p in parts], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]
