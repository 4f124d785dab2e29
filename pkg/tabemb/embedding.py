from __future__ import annotations
import hashlib
import logging
import os
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np

from .cache import EmbeddingCache, quantize
from .config import BackendConfig
from .errors import ArgumentError, EmbeddingError, EmbeddingTransportError
from .tables import Table, sample_column_values

SEPARATOR = " | "
MAX_TEXT_CHARS = 4096
N_STAT_DIMS = 4

logger = logging.getLogger(__name__)


class Stage(str, Enum):
    INITIAL = "initial"
    REFINED = "refined"


@dataclass(frozen=True, eq=False)
class ColumnEmbedding:
    vector: np.ndarray
    stage: Stage = Stage.INITIAL

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise EmbeddingError("embedding has non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


# ---- Registry Pattern -------------------------------------------------------

class EmbeddingBackend:
    """A frozen text encoder: same text, same backend_id -> same vector."""
    kind = "abstract"

    def __init__(self, dim: int):
        if dim < 8:
            raise ArgumentError(f"embedding width must be >= 8, got {dim}")
        self.dim = dim
        self.calls = 0
        self.texts_embedded = 0

    @property
    def backend_id(self) -> str:
        raise NotImplementedError

    def _embed(self, texts: Sequence[str]) -> List[np.ndarray]:
        raise NotImplementedError

    def embed_batch(self, texts: Sequence[str]) -> List[np.ndarray]:
        if not texts:
            return []
        vectors = self._embed(texts)
        for pos, v in enumerate(vectors):
            if v.shape != (self.dim,):
                raise EmbeddingError(f"{self.backend_id} returned width {v.shape[-1] if v.ndim else 0}, expected {self.dim}", column=pos)
            if not np.all(np.isfinite(v)):
                raise EmbeddingError(f"{self.backend_id} returned non-finite values", column=pos)
        self.texts_embedded += len(texts)
        return vectors


REGISTRY: Dict[str, type] = {}


def register(name: str):
    def _wrap(cls):
        cls.kind = name
        REGISTRY[name] = cls
        return cls
    return _wrap


def make_backend(config: BackendConfig) -> EmbeddingBackend:
    if config.kind not in REGISTRY:
        raise ArgumentError(f"Unknown backend '{config.kind}'. Registered: {list(REGISTRY)}")
    return REGISTRY[config.kind].from_config(config)


# ---- Local hashed character n-grams ----------------------------------------

@lru_cache(maxsize=65536)
def _bucket(gram: str, buckets: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


def text_statistics(text: str) -> np.ndarray:
    """(mean cell length, digit fraction, alpha fraction, value count), squashed into [0, 1]."""
    values = text.split(SEPARATOR)
    chars = "".join(values)
    mean_len = sum(len(v) for v in values) / len(values)
    digit = sum(ch.isdigit() for ch in chars) / len(chars) if chars else 0.0
    alpha = sum(ch.isalpha() for ch in chars) / len(chars) if chars else 0.0
    return np.array([np.tanh(mean_len / 16.0), digit, alpha, np.tanh(len(values) / 25.0)])


@register("local")
class LocalHashBackend(EmbeddingBackend):
    """
    Deterministic stand-in for a frozen language model: character 3-gram counts
    of each value hashed into d-4 buckets (unit-normalized), followed by 4
    statistic dims; the whole vector is L2-normalized. Grams never span the
    separator, so the vector depends only on the multiset of values.
    """

    @classmethod
    def from_config(cls, config: BackendConfig) -> "LocalHashBackend":
        return cls(config.dim)

    @property
    def backend_id(self) -> str:
        return f"local-char3-d{self.dim}"

    def embed_one(self, text: str) -> np.ndarray:
        buckets = self.dim - N_STAT_DIMS
        grams = np.zeros(buckets)
        for value in text.split(SEPARATOR):
            for i in range(len(value) - 2):
                grams[_bucket(value[i:i + 3], buckets)] += 1.0
        norm = np.linalg.norm(grams)
        if norm > 0:
            grams /= norm
        vec = np.concatenate([grams, text_statistics(text)])
        return vec / np.linalg.norm(vec)

    def _embed(self, texts: Sequence[str]) -> List[np.ndarray]:
        self.calls += 1
        return [self.embed_one(t) for t in texts]


# ---- Remote embeddings service ----------------------------------------------

def _transient_errors() -> tuple:
    import openai
    return (openai.APIConnectionError, openai.APITimeoutError, openai.RateLimitError, openai.InternalServerError)


@register("remote")
class RemoteBackend(EmbeddingBackend):
    """
    POST {base_url}/embeddings with {"input": [...], "model": ...}; the service
    pools token states itself. 3 attempts with exponential backoff on transient
    transport errors, then EmbeddingTransportError.
    """
    attempts = 3

    def __init__(self, dim: int, base_url: str, model: str, api_key_env: str = "TABEMB_EMBED_API_KEY",
                 timeout: float = 30.0, request_size: int = 64, backoff: float = 0.5):
        super().__init__(dim)
        self.base_url, self.model = base_url.rstrip("/"), model
        self.api_key_env, self.timeout, self.request_size = api_key_env, timeout, request_size
        self.backoff = backoff
        self._client = None

    @classmethod
    def from_config(cls, config: BackendConfig) -> "RemoteBackend":
        return cls(config.dim, config.base_url, config.model, config.api_key_env,
                   config.timeout, config.request_size)

    @property
    def backend_id(self) -> str:
        return f"remote-{self.model}-d{self.dim}"

    def _get_client(self):
        """Lazy initialization of the OpenAI-compatible client."""
        if self._client is None:
            from openai import OpenAI
            api_key = os.environ.get(self.api_key_env) or "unset"
            self._client = OpenAI(base_url=self.base_url, api_key=api_key, timeout=self.timeout, max_retries=0)
        return self._client

    def _request_once(self, texts: List[str]) -> List[np.ndarray]:
        self.calls += 1
        resp = self._get_client().embeddings.create(model=self.model, input=texts)
        data = sorted(resp.data, key=lambda item: item.index)
        if len(data) != len(texts):
            raise EmbeddingError(f"{self.backend_id} returned {len(data)} vectors for {len(texts)} texts")
        return [np.asarray(item.embedding, dtype=np.float64) for item in data]

    def _request(self, texts: List[str]) -> List[np.ndarray]:
        from tenacity import RetryError, retry, retry_if_exception_type, stop_after_attempt, wait_exponential

        retrying = retry(
            stop=stop_after_attempt(self.attempts),
            wait=wait_exponential(multiplier=self.backoff, max=8),
            retry=retry_if_exception_type(_transient_errors()),
        )(self._request_once)
        try:
            return retrying(texts)
        except RetryError as e:
            cause = e.last_attempt.exception()
            logger.error(f"Embedding request to {self.base_url} failed {self.attempts} times: {cause}")
            raise EmbeddingTransportError(f"{type(cause).__name__}: {cause}", attempts=self.attempts) from cause

    def _embed(self, texts: Sequence[str]) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for i in range(0, len(texts), self.request_size):
            out.extend(self._request(list(texts[i:i + self.request_size])))
        return out


# ---- Column embedding --------------------------------------------------------

def serialize_column(values: Sequence[str]) -> str:
    """Join trimmed values with ' | ', cut at the last complete value within 4096 chars."""
    if not values:
        raise ArgumentError("cannot serialize an empty value list")
    parts: List[str] = []
    length = 0
    for v in values:
        piece = v.strip()
        extra = len(piece) + (len(SEPARATOR) if parts else 0)
        if length + extra > MAX_TEXT_CHARS:
            break
        parts.append(piece)
        length += extra
    if not parts:
        # a single value longer than the cap is cut hard
        return values[0].strip()[:MAX_TEXT_CHARS]
    return SEPARATOR.join(parts)


def embed_text(backend: EmbeddingBackend, text: str) -> ColumnEmbedding:
    if not text:
        raise ArgumentError("cannot embed empty text")
    return ColumnEmbedding(backend.embed_batch([text])[0], Stage.INITIAL)


def column_embeddings(table: Table, backend: EmbeddingBackend, m: int, seed: int,
                      cache: Optional[EmbeddingCache] = None) -> List[ColumnEmbedding]:
    """sample -> serialize -> (cache | embed) for every column, in column order."""
    texts = [serialize_column(sample_column_values(col, m, seed)) for col in table.columns]
    vectors: List[Optional[np.ndarray]] = [None] * len(texts)
    pending: Dict[str, List[int]] = {}
    for i, text in enumerate(texts):
        hit = cache.get(backend.backend_id, text) if cache is not None else None
        if hit is not None:
            vectors[i] = hit
        else:
            pending.setdefault(text, []).append(i)

    if pending:
        unique = list(pending)
        try:
            computed = backend.embed_batch(unique)
        except EmbeddingError as e:
            pos = e.column if e.column is not None else 0
            column = pending[unique[min(pos, len(unique) - 1)]][0]
            raise e.at_column(column) from e
        for text, vec in zip(unique, computed):
            stored = cache.put(backend.backend_id, text, vec) if cache is not None else quantize(vec)
            for i in pending[text]:
                vectors[i] = stored.copy()
        logger.debug(f"{table.table_id}: embedded {len(unique)} of {len(texts)} columns")
    return [ColumnEmbedding(v, Stage.INITIAL) for v in vectors]

