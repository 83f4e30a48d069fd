"""Pooling contract: mean of exactly the contributing token vectors."""

import pytest
import torch

from lmdexport.format import ExportError
from lmdexport.pooling import masked_mean


def test_matches_manual_mean_over_nonpadding():
    torch.manual_seed(0)
    hidden = torch.randn(3, 6, 4)
    mask = torch.tensor([
        [1, 1, 1, 1, 1, 1],
        [1, 1, 1, 0, 0, 0],
        [1, 0, 0, 0, 0, 0],
    ])
    pooled = masked_mean(hidden, mask)
    for row in range(3):
        keep = mask[row].bool()
        manual = hidden[row][keep].mean(dim=0)
        torch.testing.assert_close(pooled[row], manual)


def test_special_token_exclusion():
    torch.manual_seed(1)
    hidden = torch.randn(1, 5, 3)
    attention = torch.tensor([[1, 1, 1, 1, 0]])
    special = torch.tensor([[1, 0, 0, 1, 0]])  # CLS ... SEP pad
    pooled = masked_mean(hidden, attention, special)
    manual = hidden[0][1:3].mean(dim=0)
    torch.testing.assert_close(pooled[0], manual)


def test_all_masked_raises():
    hidden = torch.randn(2, 3, 2)
    attention = torch.tensor([[1, 1, 0], [1, 1, 1]])
    special = torch.tensor([[1, 1, 0], [0, 0, 0]])  # row 0 loses every token
    with pytest.raises(ExportError, match=r"rows \[0\]"):
        masked_mean(hidden, attention, special)


def test_model_hidden_states_agree(tiny_bert):
    """Pooled export values equal the mean of raw last-layer states."""
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(tiny_bert)
    model = AutoModel.from_pretrained(tiny_bert)
    model.eval()
    texts = ["word1 word2 word3 word4", "word5"]
    encoded = tokenizer(texts, padding=True, return_tensors="pt")
    with torch.no_grad():
        hidden = model(**encoded).last_hidden_state
    pooled = masked_mean(hidden, encoded["attention_mask"])
    for row in range(2):
        keep = encoded["attention_mask"][row].bool()
        torch.testing.assert_close(pooled[row], hidden[row][keep].mean(dim=0))
