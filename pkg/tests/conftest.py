import numpy as np
import pytest

from lmdkit import EmbeddingDataset


def make_ds(name, values, split="train", seq_len=128):
    return EmbeddingDataset(
        model_name=name, split=split, seq_len=seq_len, values=np.asarray(values, dtype=np.float64)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
