"""Corpus loading and seeded sequence selection.

Selection is the alignment-critical step: every model exported against
the same (corpus, seed, counts, eligibility settings) must see the same
sequences in the same order, so row i always means the same text. The
draw is a Philox-seeded permutation of the eligible indices, partitioned
into splits in the fixed order train, validation, test. Nothing about it
depends on the model being exported.

Corpus identifiers:
    file:/path/to/corpus.txt     one sequence per line (plain path works too)
    hf:<dataset>[:<config>][:<split>]   via the datasets library

Optional eligibility filter: keep only sequences whose token count under
a designated reference tokenizer (counted without special tokens) falls
in [min_tokens, max_tokens]. All models must share the same reference
settings for alignment to hold.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .format import ExportError

SPLIT_ORDER = ("train", "validation", "test")


def load_sequences(corpus: str) -> list[str]:
    """Non-empty text sequences for a corpus identifier."""
    if corpus.startswith("hf:"):
        return _load_hf(corpus)
    path = Path(corpus[5:]) if corpus.startswith("file:") else Path(corpus)
    if not path.exists():
        raise ExportError(f"corpus file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    sequences = [line.strip() for line in lines]
    sequences = [s for s in sequences if s]
    if not sequences:
        raise ExportError(f"corpus {path} has no non-empty lines")
    return sequences


def _load_hf(corpus: str) -> list[str]:
    try:
        import datasets
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise ExportError("hf: corpora need the 'datasets' package installed") from exc
    parts = corpus.split(":")
    name = parts[1]
    config = parts[2] if len(parts) > 2 and parts[2] else None
    split = parts[3] if len(parts) > 3 and parts[3] else "train"
    try:
        ds = datasets.load_dataset(name, config, split=split)
    except Exception as exc:
        raise ExportError(f"failed loading dataset {corpus}: {exc}") from exc
    column = "text" if "text" in ds.column_names else ds.column_names[0]
    sequences = [str(x).strip() for x in ds[column]]
    sequences = [s for s in sequences if s]
    if not sequences:
        raise ExportError(f"dataset {corpus} produced no non-empty sequences")
    return sequences


def eligible_indices(
    sequences: Sequence[str],
    reference_tokenizer=None,
    min_tokens: int = 16,
    max_tokens: int = 512,
) -> list[int]:
    """Indices passing the reference-length filter (all, when no reference)."""
    if reference_tokenizer is None:
        return list(range(len(sequences)))
    kept = []
    for i, text in enumerate(sequences):
        n_tokens = len(reference_tokenizer(text, add_special_tokens=False)["input_ids"])
        if min_tokens <= n_tokens <= max_tokens:
            kept.append(i)
    return kept


@dataclass
class Selection:
    """Seed-determined sequence assignment, identical for every model."""

    seed: int
    indices_by_split: dict[str, list[int]]

    def texts(self, sequences: Sequence[str], split: str) -> list[str]:
        return [sequences[i] for i in self.indices_by_split[split]]


def select_sequences(
    n_eligible_pool: Sequence[int],
    counts: dict[str, int],
    seed: int,
) -> Selection:
    """Partition a seeded permutation of the pool into the requested splits."""
    wanted = {s: c for s, c in counts.items() if c > 0}
    for split in wanted:
        if split not in SPLIT_ORDER:
            raise ExportError(f"unknown split {split!r}")
    total = sum(wanted.values())
    pool = list(n_eligible_pool)
    if total > len(pool):
        raise ExportError(
            f"requested {total} sequences but only {len(pool)} are eligible"
        )
    order = np.random.Generator(np.random.Philox(key=seed)).permutation(len(pool))
    cursor = 0
    by_split: dict[str, list[int]] = {}
    for split in SPLIT_ORDER:
        if split not in wanted:
            continue
        take = wanted[split]
        by_split[split] = [pool[i] for i in order[cursor : cursor + take]]
        cursor += take
    return Selection(seed=seed, indices_by_split=by_split)
