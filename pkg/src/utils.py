import hashlib
import io
import json
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd


class ConceptMinerError(Exception):
    """Base class for every error raised by the concept miner."""


class ValidationError(ConceptMinerError, ValueError):
    """Raised when inputs violate a shape, range or precondition contract."""


class DivergenceError(ConceptMinerError):
    """Raised when an optimizer produces a non-finite objective."""


HASH_BYTES = 16


def load_json(path):
    """Load a JSON document, returning None when the file does not exist"""
    path = Path(path)
    if path.exists():
        with path.open("r") as f:
            return json.load(f)
    return None


def save_json(data, path):
    """Save a JSON document with stable formatting"""
    path = Path(path)
    try:
        with path.open("w") as f:
            json.dump(data, f, indent=2)
            f.write("\n")
    except OSError as e:
        raise ConceptMinerError(f"cannot write {path}: {e}") from e


def config_hash(config: Dict[str, Any]) -> str:
    """Short SHA-256 fingerprint of a config dictionary"""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:HASH_BYTES]


def calculate_percentage(part, total):
    """Calculate percentage safely"""
    if total == 0:
        return 0.0
    return (part / total) * 100


def export_data_to_csv(data, path=None):
    """Write rows (list of dicts or DataFrame) as CSV; return the CSV text"""
    df = data if isinstance(data, pd.DataFrame) else pd.DataFrame(data)
    csv_buffer = io.StringIO()
    df.to_csv(csv_buffer, index=False, lineterminator="\n")
    text = csv_buffer.getvalue()
    if path is not None:
        try:
            Path(path).write_text(text)
        except OSError as e:
            raise ConceptMinerError(f"cannot write {path}: {e}") from e
    return text


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-normalise a matrix; zero rows stay zero."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    return matrix / np.where(norms > 0, norms, 1.0)


# Binary artifacts: magic | version u32 | config hash (16 ascii bytes) | dims u32...

def pack_artifact_header(magic: bytes, version: int, cfg_hash: str, dims: Sequence[int]) -> bytes:
    tag = (cfg_hash or "").encode("ascii")[:HASH_BYTES].ljust(HASH_BYTES, b"-")
    return struct.pack("<4sI", magic, version) + tag + struct.pack(f"<{len(dims)}I", *dims)


def unpack_artifact_header(
    blob: bytes, magic: bytes, n_dims: int, error_cls=ConceptMinerError
) -> Tuple[int, str, List[int], int]:
    """Parse a header written by pack_artifact_header.

    Returns
    -------
    (version, config hash, dims, payload offset)
    """
    size = 8 + HASH_BYTES + 4 * n_dims
    if len(blob) < size:
        raise error_cls(f"truncated header: {len(blob)} bytes")
    found, version = struct.unpack_from("<4sI", blob, 0)
    if found != magic:
        raise error_cls(f"bad magic {found!r}, expected {magic!r}")
    if version != 1:
        raise error_cls(f"unsupported version {version}")
    tag = blob[8:8 + HASH_BYTES].decode("ascii", errors="replace").rstrip("-")
    dims = list(struct.unpack_from(f"<{n_dims}I", blob, 8 + HASH_BYTES))
    return version, tag, dims, size


def read_f8(blob: bytes, offset: int, count: int, error_cls=ConceptMinerError) -> Tuple[np.ndarray, int]:
    end = offset + 8 * count
    if len(blob) < end:
        raise error_cls("truncated payload")
    return np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64), end


def write_bytes(path, chunks: Iterable[bytes]):
    path = Path(path)
    try:
        with path.open("wb") as f:
            for chunk in chunks:
                f.write(chunk)
    except OSError as e:
        raise ConceptMinerError(f"cannot write {path}: {e}") from e


def read_bytes(path) -> bytes:
    path = Path(path)
    try:
        return path.read_bytes()
    except OSError as e:
        raise ConceptMinerError(f"cannot read {path}: {e}") from e
