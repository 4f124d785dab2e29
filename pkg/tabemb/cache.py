from __future__ import annotations
import hashlib
import logging
import re
import struct
import threading
from pathlib import Path
from typing import Dict, Optional

import numpy as np

logger = logging.getLogger(__name__)

# File layout (little-endian), one file per backend_id:
#   header : b"TECACHE1"
#   record : key (16 bytes, blake2b of the serialized column text)
#            d   (uint32)
#            vec (d x float32)
# Records are only ever appended; on load the last record for a key wins.
# Vectors are stored as float32: every vector handed out by the cache (and by
# column_embeddings for a fresh computation) has been rounded through float32.
MAGIC = b"TECACHE1"
_KEY_BYTES = 16
_DIM = struct.Struct("<I")


def cache_key(text: str) -> bytes:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=_KEY_BYTES).digest()


def quantize(vector: np.ndarray) -> np.ndarray:
    """Round through f32. A unit vector stays unit-norm only to about 1e-7 afterwards."""
    return np.asarray(vector, dtype=np.float64).astype(np.float32).astype(np.float64)


def _safe_name(backend_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", backend_id)


class EmbeddingCache:
    """Persistent (backend_id, text hash) -> vector store. root=None keeps it in memory."""

    def __init__(self, root: "str | Path | None" = None):
        self.root = Path(root) if root is not None else None
        self._index: Dict[str, Dict[bytes, np.ndarray]] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, backend_id: str) -> Optional[Path]:
        return self.root / f"{_safe_name(backend_id)}.bin" if self.root is not None else None

    def _entries(self, backend_id: str) -> Dict[bytes, np.ndarray]:
        entries = self._index.get(backend_id)
        if entries is None:
            with self._lock:
                entries = self._index.get(backend_id)
                if entries is None:
                    entries = self._read(backend_id)
                    self._index[backend_id] = entries
        return entries

    def _read(self, backend_id: str) -> Dict[bytes, np.ndarray]:
        path = self.path_for(backend_id)
        entries: Dict[bytes, np.ndarray] = {}
        if path is None or not path.exists():
            return entries
        blob = path.read_bytes()
        if not blob.startswith(MAGIC):
            logger.warning(f"Ignoring cache file with unknown header: {path}")
            return entries
        pos = len(MAGIC)
        while pos < len(blob):
            head_end = pos + _KEY_BYTES + _DIM.size
            if head_end > len(blob):
                break
            key = blob[pos:pos + _KEY_BYTES]
            (d,) = _DIM.unpack_from(blob, pos + _KEY_BYTES)
            end = head_end + 4 * d
            if end > len(blob):
                break
            entries[key] = np.frombuffer(blob, dtype="<f4", count=d, offset=head_end).astype(np.float64)
            pos = end
        if pos < len(blob):
            logger.warning(f"Cache file {path} has a truncated tail record; it was ignored")
        logger.debug(f"Loaded {len(entries)} cached vectors for {backend_id}")
        return entries

    def get(self, backend_id: str, text: str) -> Optional[np.ndarray]:
        hit = self._entries(backend_id).get(cache_key(text))
        if hit is None:
            self.misses += 1
            return None
        self.hits += 1
        return hit.copy()

    def put(self, backend_id: str, text: str, vector: np.ndarray) -> np.ndarray:
        stored = quantize(vector)
        key = cache_key(text)
        entries = self._entries(backend_id)
        with self._lock:
            entries[key] = stored
            path = self.path_for(backend_id)
            if path is not None:
                fresh = not path.exists()
                with path.open("ab") as fh:
                    if fresh:
                        fh.write(MAGIC)
                    fh.write(key + _DIM.pack(stored.size) + stored.astype("<f4").tobytes())
        return stored.copy()

    def __len__(self) -> int:
        return sum(len(v) for v in self._index.values())
