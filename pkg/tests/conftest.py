import pytest
import torch

from cifm.data import HashingTokenizer, encode_records
from cifm.encoder import MLPEncoder, TinyTransformer
from cifm.oracle import make_synthetic_corpus


@pytest.fixture
def tiny_dataset():
    return make_synthetic_corpus("separable", seed=0, sizes=(60, 30, 30))


@pytest.fixture
def tokenizer():
    return HashingTokenizer(vocab_size=500, seed=0, max_length=32)


@pytest.fixture
def batch(tiny_dataset, tokenizer):
    enc = encode_records(tiny_dataset.train[:8], tiny_dataset, tokenizer)
    return enc


def make_mlp(num_outputs=3, dtype=torch.float64, seed=0, dropout=0.2):
    torch.manual_seed(seed)
    return MLPEncoder(500, num_outputs, dim=16, dropout=dropout).to(dtype)


def make_transformer(num_outputs=3, dtype=torch.float64, seed=0):
    torch.manual_seed(seed)
    return TinyTransformer(500, num_outputs, dim=16, dropout=0.2, heads=2, max_length=32).to(dtype)
