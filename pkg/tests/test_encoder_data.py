import pytest
import torch

from cifm.data import Dataset, EncodedBatch, HashingTokenizer, Record, encode_records, iter_batches
from cifm.encoder import build_encoder, load_checkpoint, save_checkpoint, weights_checksum
from cifm.errors import ConfigError, DataError

from conftest import make_mlp, make_transformer


@pytest.mark.parametrize("factory", [make_mlp, make_transformer])
def test_encode_determinism(batch, factory):
    model = factory()
    a = model.encode(batch, dropout_active=True, seed=4)
    b = model.encode(batch, dropout_active=True, seed=4)
    assert torch.equal(a.pooled, b.pooled) and torch.equal(a.logits, b.logits)
    c = model.encode(batch, seed=1)
    d = model.encode(batch, seed=2)
    assert torch.equal(c.pooled, d.pooled)
    e = model.encode(batch, dropout_active=True, seed=5)
    assert float((a.pooled - e.pooled).norm().detach()) > 0


def test_view_pair(batch):
    model = make_mlp()
    pair, _, _ = model.make_view_pair(batch, 3, 3)
    assert torch.equal(pair.anchor, pair.positive)
    pair, _, _ = model.make_view_pair(batch, 3, 4)
    cos = torch.nn.functional.cosine_similarity(pair.anchor, pair.positive)
    assert (cos < 1 - 1e-9).any()


def test_dropout_is_stateless(batch):
    model = make_mlp()
    torch.manual_seed(0)
    a = model.encode(batch, True, 9).pooled
    torch.manual_seed(123)
    torch.rand(10)
    b = model.encode(batch, True, 9).pooled
    assert torch.equal(a, b)


def test_parameter_groups():
    mlp = make_mlp()
    assert set(mlp.parameter_groups()) == {"embedding", "layer.0", "layer.1", "head"}
    with pytest.raises(ConfigError):
        mlp.named_group("layer.9")
    tr = make_transformer()
    assert set(tr.parameter_groups()) == {"embedding", "layer.0", "layer.1", "head"}
    grouped = {id(p) for ps in tr.parameter_groups().values() for p in ps}
    assert grouped == {id(p) for p in tr.parameters()}
    assert tr.extractor_groups() == ["embedding", "layer.0", "layer.1"]


def test_build_encoder_unknown():
    with pytest.raises(ConfigError):
        build_encoder("lstm", vocab_size=10, num_outputs=2)


@pytest.mark.parametrize("factory", [make_mlp, make_transformer])
def test_checkpoint_round_trip(tmp_path, batch, factory):
    model = factory()
    path = save_checkpoint(tmp_path / "m.zip", model, tokenizer_manifest={"vocab_size": 500}, extra={"seed": 3})
    loaded, manifest = load_checkpoint(path)
    assert manifest["extra"]["seed"] == 3
    assert weights_checksum(loaded.parameters()) == weights_checksum(model.parameters())
    assert torch.equal(loaded.encode(batch).logits, model.encode(batch).logits)


def test_tokenizer_is_deterministic_and_salted():
    a = HashingTokenizer(vocab_size=1000, seed=0)
    b = HashingTokenizer(vocab_size=1000, seed=0)
    c = HashingTokenizer(vocab_size=1000, seed=1)
    ids_a, mask = a.encode(["hello world", "hi"])
    assert torch.equal(ids_a, b.encode(["hello world", "hi"])[0])
    assert not torch.equal(ids_a, c.encode(["hello world", "hi"])[0])
    assert ids_a[0, 0] == 1 and ids_a[1, 2] == 0
    assert mask.tolist() == [[1, 1, 1], [1, 1, 0]]


def test_encode_records_unknown_label():
    ds = Dataset("t", "classification", [Record("a", "x")], [Record("b", "x")], [Record("c", "x")])
    with pytest.raises(DataError):
        encode_records([Record("d", "y")], ds, HashingTokenizer(vocab_size=100))


def test_batch_validation():
    b = EncodedBatch(torch.tensor([[1, 600]]), torch.tensor([[1, 1]]), torch.tensor([0]))
    with pytest.raises(DataError):
        b.validate(500)
    b = EncodedBatch(torch.tensor([[1, 0]]), torch.tensor([[0, 0]]), torch.tensor([0]))
    with pytest.raises(DataError):
        b.validate(500)


def test_iter_batches_covers_everything(tiny_dataset, tokenizer):
    enc = encode_records(tiny_dataset.train, tiny_dataset, tokenizer)
    seen = sum(len(b) for b in iter_batches(enc, 7, generator=torch.Generator().manual_seed(0)))
    assert seen == len(enc)
