import math

import pytest
import torch

from cifm.data import HashingTokenizer
from cifm.errors import NumericError
from cifm.objective import ObjectiveConfig
from cifm.oracle import make_synthetic_corpus
from cifm.perturbation import PerturbationSpec
from cifm.trainer import ModelConfig, TrainConfig, TrainingAborted, multi_seed, train

SMALL = (120, 40, 40)


def _fast(**kw):
    base = dict(epochs=4, batch_size=32, max_length=32, lr=1e-2, patience=3, seeds=(0,))
    base.update(kw)
    base["patience"] = min(base["patience"], base["epochs"])
    return TrainConfig(**base)


def _model(ds, arch="mlp"):
    mc = ModelConfig(arch=arch, dim=16, vocab_size=2000)
    return lambda: mc.build(ds.num_outputs, 32)


def tok():
    return HashingTokenizer(2000, 0, 32)


def test_same_seed_identical_record():
    ds = make_synthetic_corpus("separable", seed=0, sizes=SMALL)
    cfg = ObjectiveConfig(beta=0.1, cim=PerturbationSpec(epsilon=0.1, rate=0.5))
    a = train(_model(ds), ds, cfg, _fast(), seed=2, tokenizer=tok())
    b = train(_model(ds), ds, cfg, _fast(), seed=2, tokenizer=tok())
    da, db = a.to_dict(), b.to_dict()
    da.pop("wall_clock"), db.pop("wall_clock")
    assert da == db


def test_patience_stops_on_constant_validation():
    ds = make_synthetic_corpus("separable", seed=0, sizes=SMALL)
    rec = train(_model(ds), ds, ObjectiveConfig(beta=0.0), _fast(epochs=10, patience=1), seed=0,
                tokenizer=tok(), val_metric_fn=lambda m, e: 0.5)
    assert len(rec.val_metrics) == 2
    assert rec.best_epoch == 0 and rec.stopped_early


def test_best_epoch_weights_are_restored():
    ds = make_synthetic_corpus("separable", seed=0, sizes=SMALL)
    scores = iter([0.1, 0.9, 0.2, 0.3])
    states = []

    def fake_val(model, epoch):
        states.append({k: v.clone() for k, v in model.state_dict().items()})
        return next(scores)

    rec = train(_model(ds), ds, ObjectiveConfig(beta=0.0), _fast(epochs=4, patience=5), seed=0,
                tokenizer=tok(), val_metric_fn=fake_val)
    assert rec.best_epoch == 1
    for k, v in rec.model.state_dict().items():
        assert torch.equal(v, states[1][k])


def test_nan_aborts_with_breakdown():
    ds = make_synthetic_corpus("separable", seed=0, sizes=SMALL)

    def poisoned():
        m = _model(ds)()
        with torch.no_grad():
            m.head.bias.fill_(float("nan"))
        return m

    with pytest.raises(TrainingAborted) as info:
        train(poisoned, ds, ObjectiveConfig(beta=0.0), _fast(), seed=0, tokenizer=tok())
    assert isinstance(info.value, NumericError)
    assert info.value.breakdown["step"] == 0


def test_separable_ce_reaches_high_f1():
    ds = make_synthetic_corpus("separable", seed=0)
    rec = train(_model(ds), ds, ObjectiveConfig(beta=0.0), _fast(epochs=20, patience=5, batch_size=64), seed=0,
                tokenizer=tok())
    assert rec.test_metric > 0.9


def test_regression_training_runs():
    ds = make_synthetic_corpus("regression", seed=0, sizes=SMALL)
    rec = train(_model(ds), ds, ObjectiveConfig(beta=0.01, task_kind="regression"), _fast(), seed=0,
                tokenizer=tok())
    assert math.isfinite(rec.test_metric)
    assert set(rec.test_report["values"]) >= {"pearson", "spearman"}


def test_mine_training_runs():
    ds = make_synthetic_corpus("separable", seed=0, sizes=SMALL)
    rec = train(_model(ds), ds, ObjectiveConfig(beta=0.1, mi_estimator="mine"), _fast(epochs=2), seed=0,
                tokenizer=tok())
    assert math.isfinite(rec.test_metric)


def test_multi_seed_aggregate_and_reproducibility():
    ds = make_synthetic_corpus("separable", seed=0, sizes=SMALL)
    tc = _fast(epochs=2, seeds=(0, 1))
    mc = ModelConfig(dim=16, vocab_size=2000)
    cfg = ObjectiveConfig(beta=0.1, cim=PerturbationSpec())
    a = multi_seed(ds, cfg, tc, mc)
    b = multi_seed(ds, cfg, tc, mc)
    assert len(a.runs) == 2
    assert a.aggregate["score"]["n"] == 2
    assert abs(a.aggregate["score"]["mean"] - b.aggregate["score"]["mean"]) <= 0.002
    assert a.values() == b.values()
