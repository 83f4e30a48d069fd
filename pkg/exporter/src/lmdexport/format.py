"""Writer for the lmdemb embedding wire format.

Implemented from the format's byte layout so this package stays
decoupled from any consumer:

    bytes 0..7    magic  b"LMDEMB\\x00\\x01"
    bytes 8..11   u32    format version (1)
    bytes 12..19  u64    n rows
    bytes 20..27  u64    d columns
    bytes 28..31  u32    dtype code (0 = float64)
    bytes 32..35  u32    sequence length T
    bytes 36..    n*d little-endian float64, row-major

plus a JSON manifest sidecar at ``<file>.json``. A small reader lives
here too, used by the tests to verify what was written.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LMDEMB\x00\x01"
FORMAT_VERSION = 1
DTYPE_F64 = 0
HEADER_STRUCT = struct.Struct("<IQQII")
HEADER_SIZE = len(MAGIC) + HEADER_STRUCT.size


class ExportError(Exception):
    """Job-level failure: bad inputs, unresolvable checkpoint, broken output."""


def write_embeddings(
    path: str | os.PathLike,
    values: np.ndarray,
    seq_len: int,
    manifest: dict | None = None,
) -> Path:
    """Write one model/split embedding matrix (atomically) plus its sidecar."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise ExportError(f"embedding matrix must be 2-D and non-empty, got {values.shape}")
    if not np.isfinite(values).all():
        bad = int(np.flatnonzero(~np.isfinite(values).all(axis=1))[0])
        raise ExportError(f"non-finite embedding in row {bad}")
    if seq_len < 1:
        raise ExportError(f"seq_len must be positive, got {seq_len}")

    n, d = values.shape
    tmp = out.with_name(out.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(HEADER_STRUCT.pack(FORMAT_VERSION, n, d, DTYPE_F64, seq_len))
        f.write(values.tobytes(order="C"))
    os.replace(tmp, out)

    if manifest is not None:
        side = out.with_name(out.name + ".json")
        side_tmp = side.with_name(side.name + ".tmp")
        side_tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        os.replace(side_tmp, side)
    return out


def make_manifest(
    model_name: str,
    checkpoint: str,
    corpus: str,
    split: str,
    seq_len: int,
    n: int,
    d: int,
    extra: dict | None = None,
) -> dict:
    return {
        "model_name": model_name,
        "checkpoint": checkpoint,
        "corpus": corpus,
        "split": split,
        "seq_len": seq_len,
        "split_sizes": {split: n},
        "d": d,
        "dtype": "float64",
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "extra": extra or {},
    }


def read_embeddings(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Read back (values, seq_len); verification helper for tests."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ExportError(f"{path}: bad magic")
    version, n, d, dtype_code, seq_len = HEADER_STRUCT.unpack(
        raw[len(MAGIC) : HEADER_SIZE]
    )
    if version != FORMAT_VERSION or dtype_code != DTYPE_F64:
        raise ExportError(f"{path}: unsupported version/dtype {version}/{dtype_code}")
    payload = raw[HEADER_SIZE:]
    if len(payload) != n * d * 8:
        raise ExportError(f"{path}: payload is {len(payload)} bytes, expected {n * d * 8}")
    values = np.frombuffer(payload, dtype="<f8").reshape(n, d)
    return values, seq_len
