import warnings
from collections import Counter

import pytest
import torch

from cifm.data import Dataset, HashingTokenizer, Record, encode_records
from cifm.encoder import weights_checksum
from cifm.errors import ConfigError, UsageError
from cifm.evalharness import (SweepSpec, TransferSpec, is_non_increasing, ood_eval, robustness_sweep,
                              subsample_protocol, transfer_probe)
from cifm.objective import ObjectiveConfig
from cifm.oracle import make_synthetic_corpus
from cifm.trainer import ModelConfig, TrainConfig, evaluate_split, train

TOK = HashingTokenizer(2000, 0, 32)


@pytest.fixture(scope="module")
def trained():
    ds = make_synthetic_corpus("separable", seed=0)
    mc = ModelConfig(dim=32, vocab_size=2000)
    rec = train(lambda: mc.build(ds.num_outputs, 32), ds, ObjectiveConfig(beta=0.0),
                TrainConfig(epochs=20, batch_size=32, max_length=32, lr=1e-2, seeds=(0,)), seed=0, tokenizer=TOK)
    return ds, rec


def test_sweep_strength_zero_is_clean(trained):
    ds, rec = trained
    curve = robustness_sweep(rec.model, ds, SweepSpec("adversarial", (0.0, 1.0, 2.0), (0, 1)), tokenizer=TOK)
    assert curve.scores[0] == rec.test_metric
    assert len(curve.rows()) == 6
    rand = robustness_sweep(rec.model, ds, SweepSpec("random", (0.0, 3.0), (0,)), tokenizer=TOK)
    assert rand.per_seed[0][0] == rec.test_metric


def test_sweep_random_model_near_chance():
    ds = make_synthetic_corpus("separable", seed=0, sizes=(30, 30, 600))
    torch.manual_seed(0)
    model = ModelConfig(dim=16, vocab_size=2000).build(ds.num_outputs, 32)
    curve = robustness_sweep(model, ds, SweepSpec("random", (0.0, 1.0, 3.0), (0,)), tokenizer=TOK)
    # macro-F1 of near-constant or random predictions on a balanced 3-class split stays well below 0.5
    assert all(s < 0.5 for s in curve.scores)


def test_sweep_spec_validation():
    with pytest.raises(ConfigError):
        SweepSpec("gaussian")
    with pytest.raises(ConfigError):
        SweepSpec(strengths=(2.0, 1.0))


def test_non_increasing():
    assert is_non_increasing([0.9, 0.8, 0.8, 0.1])
    assert not is_non_increasing([0.5, 0.6])


def test_ood_identity_map_matches_in_domain(trained):
    ds, rec = trained
    report = ood_eval(rec.model, ds.label_set, ds, {c: [c] for c in ds.label_set}, tokenizer=TOK)
    in_domain = evaluate_split(rec.model, ds, encode_records(ds.test, ds, TOK))
    assert abs(report.values["macro_f1"] - in_domain.values["macro_f1"]) < 1e-12
    assert report.support["excluded"] == 0


def test_ood_support_counts_by_enumeration(trained):
    _, rec = trained
    # 3 source classes onto a 7-class target; g is uncovered
    target_labels = list("abcdefg")
    recs = [Record(f"w{i} key{'abc'[i % 3]}0", target_labels[i % 7]) for i in range(70)]
    target = Dataset("t7", "classification", recs[:7], recs[:7], recs, label_set=target_labels)
    label_map = {"a": ["a", "d"], "b": ["b", "e"], "c": ["c", "f"]}
    report = ood_eval(rec.model, ["a", "b", "c"], target, label_map, tokenizer=TOK)
    expected = Counter(r.target for r in recs if r.target != "g")
    assert {k: v for k, v in report.support.items() if k != "excluded"} == dict(expected)
    assert report.support["excluded"] == 10


def test_ood_empty_map(trained):
    ds, rec = trained
    with pytest.raises(UsageError):
        ood_eval(rec.model, ds.label_set, ds, {"a": ["zzz"]}, tokenizer=TOK)


def test_ood_taxonomy_pair():
    pair = make_synthetic_corpus("taxonomy-pair", seed=0, sizes=(300, 60, 120))
    mc = ModelConfig(dim=16, vocab_size=2000)
    rec = train(lambda: mc.build(pair.source.num_outputs, 32), pair.source, ObjectiveConfig(beta=0.0),
                TrainConfig(epochs=20, batch_size=32, max_length=32, lr=1e-2, seeds=(0,)), seed=0, tokenizer=TOK)
    report = ood_eval(rec.model, pair.source.label_set, pair.target, pair.label_map, tokenizer=TOK)
    assert report.values["macro_f1"] > 0.8


def test_subsample_protocol():
    recs = [Record(str(i), "ab"[i % 2] if i < 80 else "c") for i in range(100)]
    full = subsample_protocol(recs, [1.0], [0])[0]
    assert full.records == recs
    half = subsample_protocol(recs, [0.5], [3])[0]
    assert len(half.records) == 50
    again = subsample_protocol(recs, [0.5], [3])[0]
    assert half.records == again.records
    strat = subsample_protocol(recs, [0.2], [0], stratified=True)[0]
    full_dist = Counter(r.target for r in recs)
    sub_dist = Counter(r.target for r in strat.records)
    for c in full_dist:
        share_full = full_dist[c] / len(recs)
        share_sub = sub_dist[c] / len(strat.records)
        assert abs(share_sub - share_full) <= 0.1 * share_full
    with pytest.raises(UsageError):
        subsample_protocol(recs, [0.0], [0])


def test_subsample_keeps_rare_class_with_warning():
    recs = [Record(str(i), "a") for i in range(99)] + [Record("x", "b")]
    with pytest.warns(UserWarning):
        sub = subsample_protocol(recs, [0.1], [0], stratified=True)[0]
    assert any(r.target == "b" for r in sub.records)


def test_transfer_probe_freezes_extractor(trained):
    ds, rec = trained
    model = rec.model
    before = weights_checksum(p for g in model.extractor_groups() for p in model.named_group(g))
    rep = transfer_probe(model, ds, TransferSpec(probe="linear", epochs=30), tokenizer=TOK)
    after = weights_checksum(p for g in model.extractor_groups() for p in model.named_group(g))
    assert before == after == rep.checksum_before == rep.checksum_after
    # probing the source task on frozen features lands within 3 points of the fine-tuned model
    assert rep.average >= rec.test_metric - 0.03
