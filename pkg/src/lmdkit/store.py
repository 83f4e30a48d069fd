"""Portable on-disk format for sequence-embedding matrices, plus row alignment.

One file holds one model's embeddings for one corpus split: a fixed
36-byte header followed by the matrix payload.

    bytes 0..7    magic  b"LMDEMB\\x00\\x01"
    bytes 8..11   u32    format version (currently 1)
    bytes 12..19  u64    n, number of rows (sequences)
    bytes 20..27  u64    d, embedding dimension
    bytes 28..31  u32    dtype code (0 = float64)
    bytes 32..35  u32    sequence length T the corpus was truncated to
    bytes 36..    n*d little-endian float64 values, row-major

Everything is little-endian so that byte-for-byte golden files compare
equal across machines. Values are stored as float64 even when produced
in float32 upstream; downstream conditioning checks (eigenvalue floors
near 1e-6) want the headroom, so exporters upcast.

A JSON manifest sidecar (``<file>.json``) records provenance: model name,
checkpoint, corpus, split sizes, dtype and creation metadata.

Row correspondence across models is positional: row i of every file in
one analysis must come from the same text sequence. ``align_datasets``
builds the stacked per-row regressor vectors from that contract.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import AlignmentError, CorruptionError, FormatError, ValidationError

MAGIC = b"LMDEMB\x00\x01"
FORMAT_VERSION = 1
DTYPE_F64 = 0
HEADER_STRUCT = struct.Struct("<IQQII")
HEADER_SIZE = len(MAGIC) + HEADER_STRUCT.size  # 36

SPLITS = ("train", "validation", "test")

MANIFEST_SUFFIX = ".json"


@dataclass
class EmbeddingDataset:
    """An n x d matrix of sequence embeddings for one model on one split.

    Rows are individual sequences; all datasets joined in one analysis
    share n, split and row order. Treated as immutable after creation.
    """

    model_name: str
    split: str
    seq_len: int
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError(
                f"{self.model_name}: embeddings must be 2-D, got shape {self.values.shape}"
            )
        validate_matrix(self.values, context=self.model_name)
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r} (expected one of {SPLITS})")
        if self.seq_len < 1:
            raise ValidationError(f"seq_len must be positive, got {self.seq_len}")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass
class DatasetManifest:
    """Provenance sidecar for one embedding file."""

    model_name: str
    checkpoint: str
    corpus: str
    split: str
    seq_len: int
    split_sizes: dict[str, int]
    d: int
    dtype: str = "float64"
    created: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "model_name": self.model_name,
            "checkpoint": self.checkpoint,
            "corpus": self.corpus,
            "split": self.split,
            "seq_len": self.seq_len,
            "split_sizes": self.split_sizes,
            "d": self.d,
            "dtype": self.dtype,
            "created": self.created,
            "extra": self.extra,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        raw = json.loads(text)
        return cls(
            model_name=raw["model_name"],
            checkpoint=raw.get("checkpoint", ""),
            corpus=raw.get("corpus", ""),
            split=raw["split"],
            seq_len=int(raw["seq_len"]),
            split_sizes={k: int(v) for k, v in raw.get("split_sizes", {}).items()},
            d=int(raw["d"]),
            dtype=raw.get("dtype", "float64"),
            created=raw.get("created", ""),
            extra=raw.get("extra", {}),
        )


def validate_matrix(values: np.ndarray, context: str = "dataset") -> None:
    """Reject empty or non-finite matrices, naming the first offending row."""
    n, d = values.shape
    if n < 1:
        raise ValidationError(f"{context}: need at least one row, got n={n}")
    if d < 1:
        raise ValidationError(f"{context}: need at least one column, got d={d}")
    finite_rows = np.isfinite(values).all(axis=1)
    if not finite_rows.all():
        bad = int(np.flatnonzero(~finite_rows)[0])
        raise ValidationError(f"{context}: non-finite value in row {bad}")


def _pack_header(n: int, d: int, seq_len: int) -> bytes:
    return MAGIC + HEADER_STRUCT.pack(FORMAT_VERSION, n, d, DTYPE_F64, seq_len)


def _read_header(f, path: Path) -> tuple[int, int, int]:
    head = f.read(HEADER_SIZE)
    if len(head) < HEADER_SIZE:
        raise CorruptionError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    if head[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes, not an embedding file")
    version, n, d, dtype_code, seq_len = HEADER_STRUCT.unpack(head[len(MAGIC) :])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if dtype_code != DTYPE_F64:
        raise FormatError(f"{path}: unsupported dtype code {dtype_code}")
    if n < 1 or d < 1:
        raise ValidationError(f"{path}: degenerate header dimensions n={n}, d={d}")
    if seq_len < 1:
        raise ValidationError(f"{path}: seq_len must be positive, got {seq_len}")
    return n, d, seq_len


def write_dataset(
    dataset: EmbeddingDataset,
    destination: str | os.PathLike,
    manifest: DatasetManifest | None = None,
) -> Path:
    """Write a dataset (and a manifest sidecar) to ``destination``.

    The write is atomic: payload goes to a temp file in the same directory
    and is renamed into place. Returns the destination path.
    """
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    validate_matrix(dataset.values, context=dataset.model_name)

    if manifest is None:
        manifest = DatasetManifest(
            model_name=dataset.model_name,
            checkpoint="",
            corpus="",
            split=dataset.split,
            seq_len=dataset.seq_len,
            split_sizes={dataset.split: dataset.n},
            d=dataset.d,
            created=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        )

    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(_pack_header(dataset.n, dataset.d, dataset.seq_len))
            payload = dataset.values
            if payload.dtype.byteorder not in ("<", "=") or payload.dtype != np.float64:
                payload = payload.astype("<f8")
            f.write(payload.tobytes(order="C"))
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise OSError(f"failed writing embedding file {path}: {exc}") from exc

    manifest_path = path.with_name(path.name + MANIFEST_SUFFIX)
    manifest_tmp = manifest_path.with_name(manifest_path.name + ".tmp")
    manifest_tmp.write_text(manifest.to_json() + "\n")
    os.replace(manifest_tmp, manifest_path)
    return path


def read_manifest(source: str | os.PathLike) -> DatasetManifest | None:
    """Manifest sidecar for an embedding file, or None when absent."""
    path = Path(str(source) + MANIFEST_SUFFIX)
    if not path.exists():
        return None
    return DatasetManifest.from_json(path.read_text())


def read_dataset(
    source: str | os.PathLike,
    model_name: str | None = None,
    split: str | None = None,
    validate: bool = True,
    mmap: bool = False,
) -> EmbeddingDataset:
    """Load a full dataset from disk.

    ``model_name``/``split`` default to the manifest sidecar's values, or
    are derived from the path (``<root>/<model>/<split>/T<L>.lmdemb``).
    With ``mmap=True`` the payload is a read-only memory map instead of a
    copy; callers must keep the file in place while using it.
    """
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"embedding file not found: {path}")
    with open(path, "rb") as f:
        n, d, seq_len = _read_header(f, path)
        expected = n * d * 8
        actual = path.stat().st_size - HEADER_SIZE
        if actual != expected:
            raise CorruptionError(
                f"{path}: payload is {actual} bytes but header promises {expected}"
            )
        if mmap:
            values = np.memmap(path, dtype="<f8", mode="r", offset=HEADER_SIZE, shape=(n, d))
        else:
            values = np.fromfile(f, dtype="<f8", count=n * d).reshape(n, d)

    manifest = read_manifest(path)
    if model_name is None:
        model_name = manifest.model_name if manifest else _model_name_from_path(path)
    if split is None:
        split = manifest.split if manifest else _split_from_path(path)

    if validate:
        validate_matrix(np.asarray(values), context=str(path))
    ds = EmbeddingDataset.__new__(EmbeddingDataset)
    ds.model_name = model_name
    ds.split = split
    ds.seq_len = seq_len
    ds.values = np.asarray(values) if not mmap else values
    if ds.split not in SPLITS:
        raise ValidationError(f"{path}: unknown split {ds.split!r}")
    return ds


def _model_name_from_path(path: Path) -> str:
    parts = path.resolve().parts
    return parts[-3] if len(parts) >= 3 else path.stem


def _split_from_path(path: Path) -> str:
    parent = path.parent.name
    return parent if parent in SPLITS else "train"


def iter_chunks(
    source: str | os.PathLike, chunk_rows: int = 8192, validate: bool = True
) -> Iterator[np.ndarray]:
    """Stream a dataset's rows in order without loading the full matrix.

    Concatenating all yielded chunks reproduces the stored matrix exactly.
    """
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be positive")
    path = Path(source)
    with open(path, "rb") as f:
        n, d, _ = _read_header(f, path)
        expected = n * d * 8
        actual = path.stat().st_size - HEADER_SIZE
        if actual != expected:
            raise CorruptionError(
                f"{path}: payload is {actual} bytes but header promises {expected}"
            )
        done = 0
        while done < n:
            take = min(chunk_rows, n - done)
            block = np.fromfile(f, dtype="<f8", count=take * d).reshape(take, d)
            if validate:
                finite = np.isfinite(block).all(axis=1)
                if not finite.all():
                    bad = done + int(np.flatnonzero(~finite)[0])
                    raise ValidationError(f"{path}: non-finite value in row {bad}")
            done += take
            yield block


class AlignedView:
    """Row-aligned view over basis datasets and an optional target.

    Yields per-row stacked vectors z (bases concatenated in the given
    order, total width sum of the basis dims) and, when a target was
    supplied, the matching target rows u. Row i of the view depends only
    on row i of each input.
    """

    def __init__(
        self,
        bases: Sequence[EmbeddingDataset],
        target: EmbeddingDataset | None = None,
    ) -> None:
        if len(bases) == 0:
            raise AlignmentError("need at least one basis dataset")
        everything = list(bases) + ([target] if target is not None else [])
        ns = {ds.model_name: ds.n for ds in everything}
        splits = {ds.model_name: ds.split for ds in everything}
        if len(set(ns.values())) > 1:
            raise AlignmentError(f"row-count mismatch across datasets: {ns}")
        if len(set(splits.values())) > 1:
            raise AlignmentError(f"split mismatch across datasets: {splits}")
        self.bases = list(bases)
        self.target = target
        self.n = everything[0].n
        self.split = everything[0].split
        self.dims = [ds.d for ds in self.bases]
        self.z_dim = int(sum(self.dims))
        self.u_dim = target.d if target is not None else None

    def z_matrix(self) -> np.ndarray:
        """Full stacked matrix, n x z_dim. Materializes everything."""
        return np.concatenate([ds.values for ds in self.bases], axis=1)

    def chunks(self, chunk_rows: int = 8192) -> Iterator[tuple[np.ndarray | None, np.ndarray]]:
        """Yield (u_chunk, z_chunk) pairs in row order; u_chunk is None without a target."""
        if chunk_rows < 1:
            raise ValueError("chunk_rows must be positive")
        for start in range(0, self.n, chunk_rows):
            stop = min(start + chunk_rows, self.n)
            z = np.concatenate([ds.values[start:stop] for ds in self.bases], axis=1)
            z = np.ascontiguousarray(z)
            if self.target is None:
                yield None, z
            else:
                u = np.ascontiguousarray(self.target.values[start:stop])
                yield u, z


def align_datasets(
    bases: Sequence[EmbeddingDataset], target: EmbeddingDataset | None = None
) -> AlignedView:
    """Check row alignment and build the stacked-vector view."""
    return AlignedView(bases, target)


def l2_normalized(dataset: EmbeddingDataset) -> EmbeddingDataset:
    """Copy of a dataset with every row scaled to unit L2 norm.

    Opt-in preprocessing; embeddings are stored raw. Zero rows are left
    untouched rather than divided by zero.
    """
    norms = np.linalg.norm(dataset.values, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return EmbeddingDataset(
        model_name=dataset.model_name,
        split=dataset.split,
        seq_len=dataset.seq_len,
        values=dataset.values / safe,
    )
