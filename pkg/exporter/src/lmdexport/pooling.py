"""Sequence embedding = mean of the last layer's token vectors.

Padding positions never contribute: the mean is weighted by the
attention mask. Special tokens ([CLS]/[SEP] equivalents) are included by
default and can be excluded via the special-tokens mask.
"""

from __future__ import annotations

import torch

from .format import ExportError


def masked_mean(
    last_hidden: torch.Tensor,
    attention_mask: torch.Tensor,
    special_tokens_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Arithmetic mean over contributing token positions, per sequence.

    last_hidden: (batch, seq, hidden); attention_mask: (batch, seq) with
    1 at real tokens. Pass special_tokens_mask (1 at special positions)
    to drop those from the mean.
    """
    mask = attention_mask
    if special_tokens_mask is not None:
        mask = mask * (1 - special_tokens_mask)
    mask = mask.to(last_hidden.dtype)
    counts = mask.sum(dim=1)
    if bool((counts == 0).any()):
        rows = torch.nonzero(counts == 0).flatten().tolist()
        raise ExportError(
            f"sequences with no contributing tokens after masking: rows {rows}"
        )
    summed = (last_hidden * mask.unsqueeze(-1)).sum(dim=1)
    return summed / counts.unsqueeze(-1)
