from __future__ import annotations
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import CheckpointError

logger = logging.getLogger(__name__)

# Layout (little-endian):
#   b"TABEMBCK" | version u16 | header length u32 | header JSON (utf-8, sorted keys)
#   then, for each entry of header["params"] in order, prod(shape) f64 values.
# The header carries the run config and its hash, the architecture (variant,
# layers, hidden, heads, in_dim), backend_id, task, labels and label fingerprint.
# No timestamps: identical runs give identical files.
MAGIC = b"TABEMBCK"
VERSION = 1
_HEAD = struct.Struct("<HI")


def write_checkpoint(path: "str | Path", header: Mapping[str, Any],
                     arrays: Sequence[Tuple[str, np.ndarray]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = [{"name": name, "shape": list(a.shape)} for name, a in arrays]
    blob = json.dumps(dict(header, params=manifest), sort_keys=True).encode("utf-8")
    chunks = [MAGIC, _HEAD.pack(VERSION, len(blob)), blob]
    chunks += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays]
    path.write_bytes(b"".join(chunks))
    logger.info(f"Checkpoint written to: {path}")
    return path


def read_checkpoint(path: "str | Path") -> Tuple[Dict[str, Any], List[Tuple[str, np.ndarray]]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file")
    pos = len(MAGIC)
    if len(blob) < pos + _HEAD.size:
        raise CheckpointError(f"{path}: truncated header")
    version, header_len = _HEAD.unpack_from(blob, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    pos += _HEAD.size
    if len(blob) < pos + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[pos:pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from None
    pos += header_len

    arrays = []
    for entry in header.get("params", []):
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated while reading parameter '{entry['name']}'")
        arrays.append((entry["name"], np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=pos)
                       .astype(np.float64).reshape(shape)))
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} unexpected trailing bytes")
    return header, arrays
