"""Evaluation protocols: robustness sweeps, OOD transfer across taxonomies,
data-constrained subsampling and frozen-extractor probes."""

from __future__ import annotations

import copy
import math
import random
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import Dataset, EncodedBatch, HashingTokenizer, Record, encode_records, iter_batches
from .encoder import Encoder, weights_checksum
from .errors import ConfigError, ConsistencyError, UsageError
from .estimators import TargetBatch, label_info_lower_bound
from .metrics import MetricReport, evaluate_predictions, macro_f1, seed_statistics
from .perturbation import test_time_perturb
from .trainer import decode_outputs, score_outputs

DEFAULT_STRENGTHS = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


# --- robustness --------------------------------------------------------------

@dataclass
class SweepSpec:
    kind: str = "adversarial"
    strengths: tuple[float, ...] = DEFAULT_STRENGTHS
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        self.strengths = tuple(float(s) for s in self.strengths)
        self.seeds = tuple(self.seeds)
        if self.kind not in ("random", "adversarial"):
            raise ConfigError(f"sweep kind must be random or adversarial, got {self.kind!r}")
        if any(s < 0 for s in self.strengths):
            raise ConfigError("sweep strengths must be non-negative")
        if list(self.strengths) != sorted(self.strengths):
            raise ConfigError("sweep strengths must be sorted ascending")
        if not self.seeds:
            raise ConfigError("sweep needs at least one seed")


@dataclass
class RobustnessCurve:
    kind: str
    strengths: list[float]
    scores: list[float]                     # seed-averaged robust score per strength
    per_seed: dict[int, list[float]]        # seed -> score per strength
    metric: str = "score"

    def rows(self) -> list[dict]:
        """Plot-ready rows: one per (strength, seed)."""
        out = []
        for i, s in enumerate(self.strengths):
            for seed, vals in self.per_seed.items():
                out.append({"strength": s, "seed": seed, "metric": self.metric, "value": vals[i]})
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "strengths": self.strengths, "scores": self.scores,
                "per_seed": {str(k): v for k, v in self.per_seed.items()}, "metric": self.metric}


def perturbed_outputs(model: Encoder, dataset: Dataset, encoded: EncodedBatch, kind: str, strength: float, *,
                      seed: int = 0, batch_size: int = 512) -> torch.Tensor:
    """Model outputs with embedding-layer noise; batching matches :func:`trainer.predict`."""
    gen = torch.Generator().manual_seed(seed)
    outs = []
    for b in iter_batches(encoded, batch_size):
        b.validate(model.vocab_size)
        grad = None
        if kind == "adversarial" and strength > 0:
            emb = model.embed(b.token_ids).detach().requires_grad_(True)
            with torch.enable_grad():
                logits = model.forward_embeddings(emb, b.attention_mask).logits
                loss = label_info_lower_bound(TargetBatch(b.labels, logits), dataset.task_kind)
                grad, = torch.autograd.grad(loss, emb)
        with torch.no_grad():
            emb = model.embed(b.token_ids)
            noisy = test_time_perturb(emb, kind, strength, grad, generator=gen, mask=b.attention_mask)
            outs.append(model.forward_embeddings(noisy, b.attention_mask).logits)
    return torch.cat(outs)


def robustness_sweep(model: Encoder, dataset: Dataset, spec: SweepSpec, *, tokenizer: HashingTokenizer | None = None,
                     encoded: EncodedBatch | None = None, batch_size: int = 512) -> RobustnessCurve:
    """Robust score (the task's own metric) on the perturbed test split at each strength."""
    encoded = encoded if encoded is not None else encode_records(dataset.test, dataset, tokenizer or HashingTokenizer())
    per_seed = {}
    for seed in spec.seeds:
        vals = []
        for s in spec.strengths:
            outputs = perturbed_outputs(model, dataset, encoded, spec.kind, s, seed=seed, batch_size=batch_size)
            vals.append(score_outputs(dataset, encoded.labels, outputs).score)
        per_seed[seed] = vals
    scores = [sum(v[i] for v in per_seed.values()) / len(per_seed) for i in range(len(spec.strengths))]
    return RobustnessCurve(spec.kind, list(spec.strengths), scores, per_seed)


def is_non_increasing(values: Sequence[float], tol: float = 0.0) -> bool:
    return all(b <= a + tol for a, b in zip(values, values[1:]))


# --- out-of-distribution -------------------------------------------------------

def invert_label_map(label_map: Mapping[str, Sequence[str] | str]) -> dict[str, str]:
    inverse = {}
    for src, targets in label_map.items():
        for t in ([targets] if isinstance(targets, str) else targets):
            if t in inverse and inverse[t] != src:
                raise UsageError(f"target label {t!r} mapped to two source labels")
            inverse[t] = src
    return inverse


def ood_eval(model: Encoder, source_labels: Sequence[str], target: Dataset, label_map: Mapping, *,
             tokenizer: HashingTokenizer | None = None, split: str = "test", batch_size: int = 512) -> MetricReport:
    """Score a source-trained classifier on a target split with a different taxonomy.

    ``label_map`` sends each source label to the target label(s) it covers.
    Target samples whose label is not covered are dropped from the metric.
    Macro-F1 is taken over the source classes that the map covers.
    """
    from .trainer import predict

    inverse = invert_label_map(label_map)
    source_labels = list(source_labels)
    unknown = set(inverse.values()) - set(source_labels)
    if unknown:
        raise UsageError(f"label_map uses unknown source labels {sorted(unknown)}")
    kept = [r for r in target.split(split) if r.target in inverse]
    if not kept or not set(inverse) & set(target.label_set or []):
        raise UsageError("label map covers no target samples")
    src_ds = Dataset(target.name, "classification", [], [], kept, label_set=source_labels)
    mapped = [Record(r.text, inverse[r.target]) for r in kept]
    encoded = encode_records(mapped, src_ds, tokenizer or HashingTokenizer())
    outputs, _ = predict(model, encoded, batch_size)
    gold, pred = decode_outputs(src_ds, encoded.labels, outputs)
    covered = sorted(set(inverse.values()), key=source_labels.index)
    report = MetricReport(values={"macro_f1": macro_f1(gold, pred, class_subset=covered)}, headline=["macro_f1"])
    report.support = dict(sorted(Counter(r.target for r in kept).items()))
    report.support["excluded"] = len(target.split(split)) - len(kept)
    return report


# --- data-constrained subsampling ---------------------------------------------

@dataclass
class Subset:
    ratio: float
    seed: int
    records: list[Record]


def _subsample_indices(targets: list, ratio: float, seed: int, stratified: bool) -> list[int]:
    n = len(targets)
    k = int(round(ratio * n))
    rng = random.Random(f"subsample:{ratio!r}:{seed}")
    if not stratified:
        return sorted(rng.sample(range(n), k))
    by_class = defaultdict(list)
    for i, t in enumerate(targets):
        by_class[t].append(i)
    classes = sorted(by_class, key=str)
    exact = {c: ratio * len(by_class[c]) for c in classes}
    alloc = {c: int(math.floor(exact[c])) for c in classes}
    # largest remainder, ties broken by class order
    for c in sorted(classes, key=lambda c: -(exact[c] - alloc[c]))[: k - sum(alloc.values())]:
        alloc[c] += 1
    short = [c for c in classes if alloc[c] == 0]
    if short:
        warnings.warn(f"ratio {ratio} leaves classes {short} empty; keeping one sample each", stacklevel=3)
        for c in short:
            alloc[c] = 1
    chosen = []
    for c in classes:
        chosen.extend(rng.sample(by_class[c], alloc[c]))
    return sorted(chosen)


def subsample_protocol(train_set: Sequence[Record], ratios: Sequence[float], seeds: Sequence[int], *,
                       stratified: bool = False) -> list[Subset]:
    """One independent draw of round(ratio * N) records per (ratio, seed)."""
    train_set = list(train_set)
    for r in ratios:
        if not 0 < r <= 1:
            raise UsageError(f"ratio {r} outside (0, 1]")
    targets = [rec.target for rec in train_set]
    out = []
    for ratio in ratios:
        for seed in seeds:
            if ratio == 1:
                idx = list(range(len(train_set)))
            else:
                idx = _subsample_indices(targets, ratio, seed, stratified)
            out.append(Subset(ratio, seed, [train_set[i] for i in idx]))
    return out


# --- transferability ---------------------------------------------------------

@dataclass
class TransferSpec:
    source_dataset: str = ""
    target_datasets: list[str] = field(default_factory=list)
    probe: str = "linear"
    frozen_groups: list[str] | None = None   # None: every extractor group
    epochs: int = 30
    lr: float = 1e-2
    batch_size: int = 64
    patience: int = 5
    weight_decay: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.probe not in ("linear", "cnn"):
            raise ConfigError(f"probe must be linear or cnn, got {self.probe!r}")


class LinearProbe(nn.Module):
    def __init__(self, dim: int, num_outputs: int):
        super().__init__()
        self.fc = nn.Linear(dim, num_outputs)

    def forward(self, pooled, token_states=None, mask=None):
        return self.fc(pooled)


class CNNProbe(nn.Module):
    """Text-CNN over token representations: widths 3/4/5, 64 filters each, masked max-pool, linear head."""

    def __init__(self, dim: int, num_outputs: int, widths=(3, 4, 5), filters: int = 64, dropout: float = 0.2):
        super().__init__()
        self.widths = tuple(widths)
        self.convs = nn.ModuleList([nn.Conv1d(dim, filters, w) for w in widths])
        self.drop = nn.Dropout(dropout)
        self.fc = nn.Linear(filters * len(widths), num_outputs)

    def forward(self, pooled, token_states, mask):
        x = token_states
        m = mask.to(x.dtype)
        need = max(self.widths)
        if x.shape[1] < need:
            pad = need - x.shape[1]
            x = F.pad(x, (0, 0, 0, pad))
            m = F.pad(m, (0, pad))
        x = x.transpose(1, 2)
        feats = []
        for w, conv in zip(self.widths, self.convs):
            h = F.relu(conv(x))
            # a window is valid if its first position is a real token
            valid = m[:, : h.shape[2]]
            h = h.masked_fill(valid[:, None, :] == 0, float("-inf"))
            feats.append(h.max(dim=2).values)
        return self.fc(self.drop(torch.cat(feats, dim=1)))


@torch.no_grad()
def _frozen_features(model: Encoder, encoded: EncodedBatch, batch_size: int = 256):
    out = []
    for b in iter_batches(encoded, batch_size):
        o = model.encode(b, dropout_active=False)
        out.append((o.pooled, o.token_states, b.attention_mask, b.labels))
    return out


def _extractor_params(model: Encoder, groups: Sequence[str]):
    return [p for g in groups for p in model.named_group(g)]


@dataclass
class TransferReport:
    per_dataset: dict[str, MetricReport]
    average: float
    checksum_before: str
    checksum_after: str

    def to_dict(self) -> dict:
        return {"per_dataset": {k: v.to_dict() for k, v in self.per_dataset.items()}, "average": self.average,
                "checksum_before": self.checksum_before, "checksum_after": self.checksum_after}


def _train_probe(model: Encoder, dataset: Dataset, spec: TransferSpec, tokenizer: HashingTokenizer) -> MetricReport:
    torch.manual_seed(spec.seed)
    dtype = next(model.parameters()).dtype
    cls = LinearProbe if spec.probe == "linear" else CNNProbe
    probe = cls(model.dim, dataset.num_outputs).to(dtype)
    opt = torch.optim.Adam(probe.parameters(), lr=spec.lr, weight_decay=spec.weight_decay)
    train_feats = _frozen_features(model, encode_records(dataset.train, dataset, tokenizer), spec.batch_size)
    val_enc = encode_records(dataset.val, dataset, tokenizer)
    test_enc = encode_records(dataset.test, dataset, tokenizer)
    val_feats = _frozen_features(model, val_enc)
    test_feats = _frozen_features(model, test_enc)

    def outputs(feats):
        probe.eval()
        with torch.no_grad():
            return torch.cat([probe(p, t, m) for p, t, m, _ in feats])

    gen = torch.Generator().manual_seed(spec.seed)
    best, best_state, bad = -math.inf, None, 0
    for _ in range(spec.epochs):
        probe.train()
        for i in torch.randperm(len(train_feats), generator=gen).tolist():
            p, t, m, y = train_feats[i]
            loss = label_info_lower_bound(TargetBatch(y, probe(p, t, m)), dataset.task_kind)
            opt.zero_grad()
            loss.backward()
            opt.step()
        val = score_outputs(dataset, val_enc.labels, outputs(val_feats)).score
        if val > best:
            best, best_state, bad = val, copy.deepcopy(probe.state_dict()), 0
        else:
            bad += 1
            if bad >= spec.patience:
                break
    probe.load_state_dict(best_state)
    return score_outputs(dataset, test_enc.labels, outputs(test_feats))


def transfer_probe(frozen_model: Encoder, target_dataset: Dataset | Sequence[Dataset], spec: TransferSpec, *,
                   tokenizer: HashingTokenizer | None = None) -> TransferReport:
    """Train a fresh linear or CNN classifier per target on frozen extractor features."""
    targets = [target_dataset] if isinstance(target_dataset, Dataset) else list(target_dataset)
    tokenizer = tokenizer or HashingTokenizer()
    groups = spec.frozen_groups or frozen_model.extractor_groups()
    params = _extractor_params(frozen_model, groups)
    before = weights_checksum(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        reports = {ds.name: _train_probe(frozen_model, ds, spec, tokenizer) for ds in targets}
    finally:
        for p, f in zip(params, flags):
            p.requires_grad_(f)
    after = weights_checksum(params)
    if after != before:
        raise ConsistencyError("extractor weights changed during probe training")
    avg = sum(r.score for r in reports.values()) / len(reports)
    return TransferReport(reports, avg, before, after)
