import numpy as np
import pytest
import torch

WORDS = [f"word{i}" for i in range(30)]
SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]


def _write_vocab(directory):
    vocab_path = directory / "vocab.txt"
    vocab_path.write_text("\n".join(SPECIALS + WORDS) + "\n")
    return vocab_path


@pytest.fixture(scope="session")
def tiny_bert(tmp_path_factory):
    from transformers import BertConfig, BertModel, BertTokenizerFast

    directory = tmp_path_factory.mktemp("tiny_bert")
    tokenizer = BertTokenizerFast(vocab_file=str(_write_vocab(directory)))
    config = BertConfig(
        vocab_size=len(SPECIALS) + len(WORDS),
        hidden_size=16,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
    )
    torch.manual_seed(1)
    model = BertModel(config)
    model.save_pretrained(directory)
    tokenizer.save_pretrained(directory)
    return str(directory)


@pytest.fixture(scope="session")
def tiny_distilbert(tmp_path_factory):
    from transformers import DistilBertConfig, DistilBertModel, DistilBertTokenizerFast

    directory = tmp_path_factory.mktemp("tiny_distilbert")
    tokenizer = DistilBertTokenizerFast(vocab_file=str(_write_vocab(directory)))
    config = DistilBertConfig(
        vocab_size=len(SPECIALS) + len(WORDS),
        dim=12,
        n_layers=2,
        n_heads=2,
        hidden_dim=24,
        max_position_embeddings=64,
    )
    torch.manual_seed(2)
    model = DistilBertModel(config)
    model.save_pretrained(directory)
    tokenizer.save_pretrained(directory)
    return str(directory)


@pytest.fixture(scope="session")
def corpus_file(tmp_path_factory):
    """Word-salad corpus with line lengths from 1 to 24 words."""
    gen = np.random.default_rng(7)
    lines = []
    for i in range(60):
        length = 1 + i % 24
        lines.append(" ".join(gen.choice(WORDS, size=length)))
    path = tmp_path_factory.mktemp("corpus") / "corpus.txt"
    path.write_text("\n".join(lines) + "\n")
    return str(path)
