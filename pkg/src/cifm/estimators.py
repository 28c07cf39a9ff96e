"""Differentiable lower bounds on I(X;Z) (InfoNCE, MINE) and the CE/MSE label term.

All values are in nats. Estimators return the bound itself (to be maximized);
the objective module turns them into a minimization loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError, InvalidBatchError, NumericError, UsageError


@dataclass
class ViewPair:
    anchor: torch.Tensor    # Z  [N, d]
    positive: torch.Tensor  # Z' [N, d], same samples, independent dropout pass

    def __post_init__(self):
        if self.anchor.shape != self.positive.shape:
            raise InvalidBatchError(f"view shapes differ: {tuple(self.anchor.shape)} vs {tuple(self.positive.shape)}")
        if self.anchor.dim() != 2:
            raise InvalidBatchError("views must be [N, d] matrices")


@dataclass
class InfoNCEConfig:
    temperature: float = 0.1
    normalize: bool = True
    # None means K = N - 1; a smaller K subsamples negatives per anchor
    num_negatives: int | None = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.num_negatives is not None and self.num_negatives < 0:
            raise ConfigError("num_negatives must be >= 0")


def infonce_lower_bound(pair: ViewPair, cfg: InfoNCEConfig, generator: torch.Generator | None = None) -> torch.Tensor:
    """log(K+1) + mean_i log softmax-probability of z_i' among {z_i'} and K other positives."""
    anchor, positive = pair.anchor, pair.positive
    n = anchor.shape[0]
    k = n - 1 if cfg.num_negatives is None else cfg.num_negatives
    if k > n - 1:
        raise ConfigError(f"num_negatives={k} exceeds N-1={n - 1}")
    if k == 0:
        if cfg.num_negatives != 0 and n < 2:
            raise InvalidBatchError("InfoNCE needs at least 2 samples")
        # single-element softmax: log 1 + log 1
        return (anchor.sum() + positive.sum()) * 0.0
    if n < 2:
        raise InvalidBatchError("InfoNCE needs at least 2 samples")

    if cfg.normalize:
        anchor = F.normalize(anchor, dim=1)
        positive = F.normalize(positive, dim=1)
    logits = anchor @ positive.T / cfg.temperature

    if k < n - 1:
        # keep the diagonal plus k random off-diagonal entries per row
        scores = torch.rand(n, n, generator=generator, dtype=torch.float64)
        scores.fill_diagonal_(-1.0)
        keep_idx = scores.topk(k, dim=1).indices
        keep = torch.zeros(n, n, dtype=torch.bool)
        keep.scatter_(1, keep_idx, True)
        keep.fill_diagonal_(True)
        logits = logits.masked_fill(~keep, float("-inf"))

    log_prob = logits.diagonal() - torch.logsumexp(logits, dim=1)
    return math.log(k + 1) + log_prob.mean()


class MineCritic(nn.Module):
    """Two-hidden-layer scorer T(x, z) -> R with an EMA of the partition term.

    The EMA is kept in log space (``log_ema``) so large critic outputs cannot
    overflow it.
    """

    def __init__(self, x_dim: int, z_dim: int, hidden: int = 64, ema_rate: float = 0.99):
        super().__init__()
        if not 0.0 < ema_rate < 1.0:
            raise ConfigError("ema_rate must lie in (0, 1)")
        self.ema_rate = ema_rate
        self.net = nn.Sequential(
            nn.Linear(x_dim + z_dim, hidden), nn.ELU(),
            nn.Linear(hidden, hidden), nn.ELU(),
            nn.Linear(hidden, 1),
        )
        self.register_buffer("log_ema", torch.tensor(float("nan"), dtype=torch.float64))

    @property
    def ema_denominator(self) -> float | None:
        v = float(self.log_ema)
        return None if math.isnan(v) else math.exp(v)

    def reset_ema(self) -> None:
        self.log_ema.fill_(float("nan"))

    def forward(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([x, z], dim=1)).squeeze(1)


def mine_lower_bound(x_features: torch.Tensor, z: torch.Tensor, critic: MineCritic, *,
                     generator: torch.Generator | None = None, permutation: torch.Tensor | None = None,
                     update_ema: bool = True) -> torch.Tensor:
    """Donsker-Varadhan bound E_joint[T] - log E_marginal[e^T].

    Marginal pairs come from shuffling ``z`` along the batch axis. The returned
    value is the plain batch bound; its gradient swaps the batch partition
    term for the running EMA (bias-corrected MINE gradient).
    """
    n = z.shape[0]
    if n < 2:
        raise InvalidBatchError("MINE needs at least 2 samples")
    if x_features.shape[0] != n:
        raise InvalidBatchError("x_features and z are not row-aligned")
    perm = permutation if permutation is not None else torch.randperm(n, generator=generator)

    t_joint = critic(x_features, z)
    t_marg = critic(x_features, z[perm])
    log_denom = torch.logsumexp(t_marg, dim=0) - math.log(n)

    current = log_denom.detach().to(torch.float64)
    if torch.isnan(critic.log_ema):
        log_ema = current
    else:
        r = critic.ema_rate
        log_ema = torch.logaddexp(math.log(r) + critic.log_ema, math.log1p(-r) + current)
    if update_ema:
        critic.log_ema.copy_(log_ema)

    # value: log_denom; gradient: grad(denom) / ema
    ratio = torch.exp(log_denom - log_ema.to(log_denom.dtype))
    corrected = log_denom.detach() + ratio - ratio.detach()
    return t_joint.mean() - corrected


@dataclass
class TargetBatch:
    labels: torch.Tensor   # [N] class indices or [N, k] real targets
    outputs: torch.Tensor  # [N, C] logits or [N, k] predictions

    def __post_init__(self):
        if self.labels.shape[0] != self.outputs.shape[0]:
            raise DataError("labels and outputs have different row counts")


def label_info_lower_bound(batch: TargetBatch, task_kind: str) -> torch.Tensor:
    """CE (classification) or per-sample squared error (regression), averaged over the batch.

    This is a loss; its negation is the surrogate for I(Y;Z).
    """
    out = batch.outputs
    if torch.isnan(out).any():
        raise NumericError("NaN in logits/predictions")
    if task_kind == "classification":
        labels = batch.labels
        if labels.dtype not in (torch.int64, torch.int32):
            raise UsageError("classification needs integer class indices")
        c = out.shape[1]
        if (labels < 0).any() or (labels >= c).any():
            raise DataError(f"label outside [0, {c})")
        return F.cross_entropy(out, labels.long())
    if task_kind == "regression":
        target = batch.labels.to(out.dtype).reshape(out.shape)
        return ((out - target) ** 2).sum(dim=1).mean()
    raise UsageError(f"unknown task kind {task_kind!r}")


def fit_mine(x: torch.Tensor, z: torch.Tensor, *, steps: int = 3000, batch_size: int = 512, lr: float = 1e-3,
             hidden: int = 64, ema_rate: float = 0.99, seed: int = 0) -> tuple[float, MineCritic]:
    """Train a standalone critic on paired samples and return the full-sample estimate."""
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    critic = MineCritic(x.shape[1], z.shape[1], hidden=hidden, ema_rate=ema_rate)
    opt = torch.optim.Adam(critic.parameters(), lr=lr)
    n = x.shape[0]
    for _ in range(steps):
        idx = torch.randint(0, n, (batch_size,), generator=gen)
        bound = mine_lower_bound(x[idx], z[idx], critic, generator=gen)
        opt.zero_grad()
        (-bound).backward()
        opt.step()
    with torch.no_grad():
        perm = torch.randperm(n, generator=gen)
        t_joint = critic(x, z)
        t_marg = critic(x, z[perm])
        est = t_joint.mean() - (torch.logsumexp(t_marg, dim=0) - math.log(n))
    return float(est), critic
