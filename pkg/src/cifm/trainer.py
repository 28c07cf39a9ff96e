"""Training loop: Adamax, early stopping on the validation headline metric, multi-seed runs."""

from __future__ import annotations

import copy
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import torch

from .data import Dataset, EncodedBatch, HashingTokenizer, encode_records, iter_batches
from .encoder import Encoder, build_encoder
from .errors import ConfigError, NumericError
from .metrics import MetricReport, ari, evaluate_predictions, seed_statistics, uniformity
from .objective import ObjectiveConfig, cifm_loss, make_critic

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    arch: str = "mlp"
    dim: int = 64
    dropout: float = 0.2
    vocab_size: int = 30000
    num_layers: int = 2
    heads: int = 2
    pooling: str | None = None
    vocab_seed: int = 0

    def build(self, num_outputs: int, max_length: int = 128) -> Encoder:
        kwargs = dict(vocab_size=self.vocab_size, num_outputs=num_outputs, dim=self.dim, dropout=self.dropout,
                      num_layers=self.num_layers)
        if self.pooling:
            kwargs["pooling"] = self.pooling
        if self.arch == "transformer":
            kwargs.update(heads=self.heads, max_length=max_length)
        return build_encoder(self.arch, **kwargs)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    max_length: int = 128
    lr: float = 5e-5
    weight_decay: float = 0.0
    patience: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    optimizer: str = "adamax"
    betas: tuple[float, float] = (0.9, 0.999)
    grad_clip: float | None = None
    eval_batch_size: int = 512

    def __post_init__(self):
        self.seeds = tuple(self.seeds)
        self.betas = tuple(self.betas)
        for name in ("epochs", "batch_size", "max_length", "patience", "eval_batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")
        if not self.lr > 0:
            raise ConfigError("train.lr must be positive")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay must be >= 0")
        if self.patience > self.epochs:
            raise ConfigError("train.patience must not exceed train.epochs")
        if self.optimizer not in ("adamax", "adam", "adamw"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not self.seeds:
            raise ConfigError("train.seeds must not be empty")


class TrainingAborted(NumericError):
    def __init__(self, message: str, breakdown: dict):
        super().__init__(f"{message}: {breakdown}")
        self.breakdown = breakdown


@dataclass
class RunRecord:
    seed: int
    epoch_losses: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    val_metrics: list[float] = field(default_factory=list)
    best_epoch: int = -1
    test_metric: float | None = None
    test_report: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    stopped_early: bool = False
    cim_steps: int = 0
    model: Encoder | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self) if f.name != "model"}


def _make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adamax":
        return torch.optim.Adamax(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    return torch.optim.AdamW(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)


@torch.no_grad()
def predict(model: Encoder, encoded: EncodedBatch, batch_size: int = 512) -> tuple[torch.Tensor, torch.Tensor]:
    """Dropout-free pass; returns (logits_or_predictions, pooled representations)."""
    logits, pooled = [], []
    for b in iter_batches(encoded, batch_size):
        out = model.encode(b, dropout_active=False)
        logits.append(out.logits)
        pooled.append(out.pooled)
    return torch.cat(logits), torch.cat(pooled)


def decode_outputs(dataset: Dataset, labels: torch.Tensor, outputs: torch.Tensor):
    """Turn label tensors and model outputs into the gold/pred sequences the metrics consume."""
    if dataset.task_kind == "classification":
        names = dataset.label_set
        gold = [names[i] for i in labels.tolist()]
        pred = [names[i] for i in outputs.argmax(dim=1).tolist()]
        return gold, pred
    return labels.numpy(), outputs.detach().numpy()


def score_outputs(dataset: Dataset, labels: torch.Tensor, outputs: torch.Tensor) -> MetricReport:
    gold, pred = decode_outputs(dataset, labels, outputs)
    return evaluate_predictions(dataset.task_kind, dataset.metrics, gold, pred,
                                labels=dataset.label_set, options=dataset.metric_options)


def evaluate_split(model: Encoder, dataset: Dataset, encoded: EncodedBatch, *, quality: bool = False,
                   batch_size: int = 512) -> MetricReport:
    outputs, pooled = predict(model, encoded, batch_size)
    report = score_outputs(dataset, encoded.labels, outputs)
    if quality:
        report.values["uniformity"] = uniformity(pooled.numpy())
        if dataset.task_kind == "classification":
            gold, pred = decode_outputs(dataset, encoded.labels, outputs)
            report.values["ari"] = ari(gold, pred)
    return report


def _check_finite(bd, epoch, step):
    vals = bd.as_dict()
    if not all(math.isfinite(v) for k, v in vals.items() if k != "cim_applied"):
        raise TrainingAborted(f"non-finite loss at epoch {epoch} step {step}", vals)


def train(model_factory: Callable[[], Encoder], dataset: Dataset, objective_cfg: ObjectiveConfig,
          train_cfg: TrainConfig, *, seed: int | None = None, tokenizer: HashingTokenizer | None = None,
          val_metric_fn: Callable[[Encoder, int], float] | None = None,
          step_callback: Callable[[int, dict], None] | None = None) -> RunRecord:
    """Train one seed; the returned record carries the best-validation model in ``record.model``."""
    seed = train_cfg.seeds[0] if seed is None else seed
    start = time.perf_counter()
    tokenizer = tokenizer or HashingTokenizer(max_length=train_cfg.max_length)
    enc_train = encode_records(dataset.train, dataset, tokenizer)
    enc_val = encode_records(dataset.val, dataset, tokenizer)
    enc_test = encode_records(dataset.test, dataset, tokenizer)

    torch.manual_seed(seed)
    model = model_factory()
    critic = make_critic(model, objective_cfg) if objective_cfg.needs_critic else None
    params = list(model.parameters()) + (list(critic.parameters()) if critic is not None else [])
    opt = _make_optimizer(params, train_cfg)
    data_gen = torch.Generator().manual_seed(seed)
    step_gen = torch.Generator().manual_seed(seed + 7919)

    record = RunRecord(seed=seed)
    best_state, best_val, bad_epochs, step = None, -math.inf, 0, 0
    for epoch in range(train_cfg.epochs):
        sums: dict[str, float] = {}
        n_steps = 0
        for batch in iter_batches(enc_train, train_cfg.batch_size, generator=data_gen):
            if len(batch) < 2 and objective_cfg.beta > 0:
                continue
            seeds = tuple(int(s) for s in torch.randint(0, 2**31 - 1, (2,), generator=step_gen))
            opt.zero_grad(set_to_none=True)
            try:
                bd = cifm_loss(model, batch, objective_cfg, seeds=seeds, critic=critic, generator=step_gen)
            except TrainingAborted:
                raise
            except NumericError as exc:
                raise TrainingAborted(f"epoch {epoch} step {step}: {exc}", {"epoch": epoch, "step": step}) from exc
            _check_finite(bd, epoch, step)
            if train_cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, train_cfg.grad_clip)
            opt.step()
            entry = bd.as_dict()
            record.step_losses.append(entry["grand_total"])
            record.cim_steps += int(bd.cim_applied)
            for k, v in entry.items():
                sums[k] = sums.get(k, 0.0) + float(v)
            if step_callback is not None:
                step_callback(step, entry)
            n_steps += 1
            step += 1
        record.epoch_losses.append({k: v / max(n_steps, 1) for k, v in sums.items()})

        if val_metric_fn is not None:
            val = float(val_metric_fn(model, epoch))
        else:
            val = evaluate_split(model, dataset, enc_val, batch_size=train_cfg.eval_batch_size).score
        record.val_metrics.append(val)
        log.debug("seed %d epoch %d val %.4f loss %.4f", seed, epoch, val, record.epoch_losses[-1].get("grand_total", 0))
        if val > best_val:
            best_val, bad_epochs = val, 0
            record.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        else:
            bad_epochs += 1
            if bad_epochs >= train_cfg.patience:
                record.stopped_early = epoch + 1 < train_cfg.epochs
                break

    model.load_state_dict(best_state)
    report = evaluate_split(model, dataset, enc_test, quality=True, batch_size=train_cfg.eval_batch_size)
    record.test_report = report.to_dict()
    record.test_metric = report.score
    record.wall_clock = time.perf_counter() - start
    record.model = model
    return record


@dataclass
class MultiSeedRecord:
    runs: list[RunRecord]
    aggregate: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {"runs": [r.to_dict() for r in self.runs], "aggregate": self.aggregate}

    def values(self, metric: str = "score") -> list[float]:
        if metric == "score":
            return [r.test_metric for r in self.runs]
        return [r.test_report["values"][metric] for r in self.runs]


def aggregate_runs(runs: Sequence[RunRecord]) -> dict[str, dict[str, float]]:
    out = {"score": seed_statistics([r.test_metric for r in runs])}
    names = runs[0].test_report.get("values", {}).keys()
    for name in names:
        out[name] = seed_statistics([r.test_report["values"][name] for r in runs])
    return out


def _run_one(args):
    dataset, objective_cfg, train_cfg, model_cfg, seed = args
    rec = train(lambda: model_cfg.build(dataset.num_outputs, train_cfg.max_length), dataset, objective_cfg,
                train_cfg, seed=seed, tokenizer=HashingTokenizer(model_cfg.vocab_size, model_cfg.vocab_seed,
                                                                 train_cfg.max_length))
    rec.model = None
    return rec


def multi_seed(dataset: Dataset, objective_cfg: ObjectiveConfig, train_cfg: TrainConfig,
               model_cfg: ModelConfig | None = None, *, workers: int = 1, keep_models: bool = False) -> MultiSeedRecord:
    """Independent run per seed, then mean/std per test metric."""
    model_cfg = model_cfg or ModelConfig()
    jobs = [(dataset, objective_cfg, train_cfg, model_cfg, s) for s in train_cfg.seeds]
    if workers > 1 and not keep_models:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_one, jobs))
    else:
        runs = []
        for job in jobs:
            dataset_, obj, tc, mc, s = job
            rec = train(lambda: mc.build(dataset_.num_outputs, tc.max_length), dataset_, obj, tc, seed=s,
                        tokenizer=HashingTokenizer(mc.vocab_size, mc.vocab_seed, tc.max_length))
            if not keep_models:
                rec.model = None
            runs.append(rec)
    return MultiSeedRecord(runs, aggregate_runs(runs))
