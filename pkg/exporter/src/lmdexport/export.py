"""Batch extraction of sequence embeddings from a pretrained checkpoint.

For each requested sequence length T and split, writes one embedding
file at ``<out>/<model>/<split>/T<T>.lmdemb`` whose rows follow the
seed-determined sequence order from ``corpus.select_sequences`` — the
same order every other model exported with the same settings sees.
Embeddings are mean pooled over non-padding token positions of the last
hidden layer and upcast to float64 on disk.

By default T counts special tokens (sequences are truncated so that
input_ids including [CLS]/[SEP] equivalents have at most T positions);
``t_counts_special=False`` instead allows T content tokens plus whatever
specials the tokenizer adds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import corpus as corpus_mod
from .format import ExportError, make_manifest, write_embeddings
from .pooling import masked_mean


@dataclass
class ExportJob:
    checkpoint: str
    corpus: str
    out_root: str
    seq_lens: list[int]
    counts: dict[str, int]
    seed: int = 0
    batch_size: int = 16
    device: str = "cpu"
    model_name: str | None = None
    include_special: bool = True
    t_counts_special: bool = True
    reference_tokenizer: str | None = None
    min_tokens: int = 16
    max_tokens: int = 512
    extra_manifest: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.seq_lens or any(t < 1 for t in self.seq_lens):
            raise ExportError(f"seq_lens must all be positive, got {self.seq_lens}")
        if all(c < 1 for c in self.counts.values()):
            raise ExportError("at least one split needs a positive sample count")
        if self.batch_size < 1:
            raise ExportError(f"batch_size must be positive, got {self.batch_size}")

    def resolved_model_name(self) -> str:
        if self.model_name:
            return self.model_name
        return self.checkpoint.rstrip("/").split("/")[-1]


def _load_model(checkpoint: str, device: str):
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        model = AutoModel.from_pretrained(checkpoint)
    except Exception as exc:
        raise ExportError(f"failed to load checkpoint {checkpoint!r}: {exc}") from exc
    model.eval()
    model.to(device)
    return tokenizer, model


def _embed_batch(model, tokenizer, texts, max_length, include_special, device):
    encoded = tokenizer(
        texts,
        padding=True,
        truncation=True,
        max_length=max_length,
        return_tensors="pt",
        return_special_tokens_mask=not include_special,
    )
    special = encoded.pop("special_tokens_mask", None)
    encoded = {k: v.to(device) for k, v in encoded.items()}
    try:
        with torch.no_grad():
            output = model(**encoded)
    except RuntimeError as exc:
        if "out of memory" in str(exc).lower():
            raise ExportError(
                f"out of memory during inference; retry with a smaller batch size "
                f"(current {len(texts)})"
            ) from exc
        raise
    pooled = masked_mean(
        output.last_hidden_state,
        encoded["attention_mask"],
        None if include_special else special.to(device),
    )
    return pooled.double().cpu().numpy()


def run_export(job: ExportJob) -> list[Path]:
    """Execute a job; returns the written embedding-file paths."""
    sequences = corpus_mod.load_sequences(job.corpus)

    reference = None
    if job.reference_tokenizer is not None:
        from transformers import AutoTokenizer

        try:
            reference = AutoTokenizer.from_pretrained(job.reference_tokenizer)
        except Exception as exc:
            raise ExportError(
                f"failed to load reference tokenizer {job.reference_tokenizer!r}: {exc}"
            ) from exc
    pool = corpus_mod.eligible_indices(sequences, reference, job.min_tokens, job.max_tokens)
    selection = corpus_mod.select_sequences(pool, job.counts, job.seed)

    tokenizer, model = _load_model(job.checkpoint, job.device)
    model_name = job.resolved_model_name()
    out_root = Path(job.out_root)
    written: list[Path] = []

    for seq_len in job.seq_lens:
        if job.t_counts_special:
            max_length = seq_len
        else:
            max_length = seq_len + tokenizer.num_special_tokens_to_add()
        for split, indices in selection.indices_by_split.items():
            texts = [sequences[i] for i in indices]
            rows = []
            for start in range(0, len(texts), job.batch_size):
                batch = texts[start : start + job.batch_size]
                rows.append(
                    _embed_batch(model, tokenizer, batch, max_length,
                                 job.include_special, job.device)
                )
            values = np.concatenate(rows, axis=0)
            manifest = make_manifest(
                model_name=model_name,
                checkpoint=job.checkpoint,
                corpus=job.corpus,
                split=split,
                seq_len=seq_len,
                n=values.shape[0],
                d=values.shape[1],
                extra={
                    "seed": job.seed,
                    "include_special": job.include_special,
                    "t_counts_special": job.t_counts_special,
                    "reference_tokenizer": job.reference_tokenizer,
                    "sequence_indices": list(indices),
                    **job.extra_manifest,
                },
            )
            path = out_root / model_name / split / f"T{seq_len}.lmdemb"
            written.append(write_embeddings(path, values, seq_len, manifest))
    return written
