"""The CIFM training objective.

Sign convention (the only place it is decided): every quantity the method
maximizes is turned into a loss to minimize,

    ifm_total = label_term - beta * input_term

where ``label_term`` is CE/MSE (the negated I(Y;Z) surrogate) and
``input_term`` is the InfoNCE or MINE lower bound on I(X;Z). The conditional
term is not a scalar; it is realized by :func:`cifm_loss` training on the
IFM loss at adversarially perturbed weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .data import EncodedBatch
from .encoder import Encoder, EncoderOutput
from .errors import ConfigError, UsageError
from .estimators import (InfoNCEConfig, MineCritic, TargetBatch, ViewPair, infonce_lower_bound,
                         label_info_lower_bound, mine_lower_bound)
from .perturbation import PerturbationSpec, cim_step

MI_ESTIMATORS = ("infonce", "mine")


@dataclass
class ObjectiveConfig:
    beta: float = 0.1
    temperature: float = 0.1
    mi_estimator: str = "infonce"
    task_kind: str = "classification"
    cim: PerturbationSpec | None = None
    num_negatives: int | None = None
    normalize: bool = True
    mine_hidden: int = 64
    mine_ema_rate: float = 0.99

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigError(f"objective.beta must be >= 0, got {self.beta}")
        if self.mi_estimator not in MI_ESTIMATORS:
            raise ConfigError(f"objective.mi_estimator must be one of {MI_ESTIMATORS}")
        if self.task_kind not in ("classification", "regression"):
            raise ConfigError(f"unknown task kind {self.task_kind!r}")
        if isinstance(self.cim, dict):
            self.cim = PerturbationSpec(**self.cim)
        self.infonce = InfoNCEConfig(self.temperature, self.normalize, self.num_negatives)

    @property
    def needs_views(self) -> bool:
        return self.beta > 0 and self.mi_estimator == "infonce"

    @property
    def needs_critic(self) -> bool:
        return self.beta > 0 and self.mi_estimator == "mine"


@dataclass
class ModelOutputs:
    anchor: EncoderOutput
    positive: EncoderOutput | None = None


@dataclass
class LossBreakdown:
    label_term: torch.Tensor
    input_term: torch.Tensor
    ifm_total: torch.Tensor
    cim_applied: bool = False
    grand_total: torch.Tensor | None = None
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        f = lambda t: float(t.detach()) if isinstance(t, torch.Tensor) else float(t)
        return {"label_term": f(self.label_term), "input_term": f(self.input_term),
                "ifm_total": f(self.ifm_total), "cim_applied": self.cim_applied,
                "grand_total": f(self.grand_total if self.grand_total is not None else self.ifm_total)}


def make_critic(model: Encoder, cfg: ObjectiveConfig) -> MineCritic:
    dtype = next(model.parameters()).dtype
    return MineCritic(model.dim, model.dim, hidden=cfg.mine_hidden, ema_rate=cfg.mine_ema_rate).to(dtype)


def forward_outputs(model: Encoder, batch: EncodedBatch, cfg: ObjectiveConfig, seeds: tuple[int, int]) -> ModelOutputs:
    anchor = model.encode(batch, dropout_active=True, seed=seeds[0])
    positive = model.encode(batch, dropout_active=True, seed=seeds[1]) if cfg.needs_views else None
    return ModelOutputs(anchor, positive)


def ifm_loss(model_outputs: ModelOutputs, batch: EncodedBatch, cfg: ObjectiveConfig, *,
             critic: MineCritic | None = None, generator: torch.Generator | None = None,
             mine_permutation: torch.Tensor | None = None, update_ema: bool = True) -> LossBreakdown:
    anchor = model_outputs.anchor
    label_term = label_info_lower_bound(TargetBatch(batch.labels, anchor.logits), cfg.task_kind)

    if cfg.mi_estimator == "infonce":
        if model_outputs.positive is None:
            if cfg.beta > 0:
                raise UsageError("InfoNCE needs a second (positive) view")
            input_term = torch.zeros((), dtype=label_term.dtype)
        else:
            input_term = infonce_lower_bound(ViewPair(anchor.pooled, model_outputs.positive.pooled), cfg.infonce,
                                             generator=generator)
    else:
        if critic is None:
            if cfg.beta > 0:
                raise UsageError("MINE estimator needs a critic")
            input_term = torch.zeros((), dtype=label_term.dtype)
        else:
            # the pre-projection representation stands in for X; it is data, not a training target
            input_term = mine_lower_bound(anchor.hidden_prepool.detach(), anchor.pooled, critic,
                                          generator=generator, permutation=mine_permutation, update_ema=update_ema)

    # beta == 0 must reproduce the plain CE/MSE loss exactly
    ifm_total = label_term if cfg.beta == 0 else label_term - cfg.beta * input_term
    return LossBreakdown(label_term, input_term, ifm_total)


def make_ifm_loss_fn(cfg: ObjectiveConfig, seeds: tuple[int, int], *, critic: MineCritic | None = None,
                     generator: torch.Generator | None = None):
    """Deterministic closure (model, batch) -> LossBreakdown with dropout seeds and negatives fixed per step."""
    neg_seed = None
    if cfg.num_negatives is not None and generator is not None:
        neg_seed = int(torch.randint(0, 2**62, (), generator=generator))
    state = {"calls": 0, "perm": None}

    def fn(model, batch):
        if critic is not None and state["perm"] is None:
            state["perm"] = torch.randperm(len(batch), generator=generator)
        outputs = forward_outputs(model, batch, cfg, seeds)
        neg_gen = torch.Generator().manual_seed(neg_seed) if neg_seed is not None else None
        bd = ifm_loss(outputs, batch, cfg, critic=critic if cfg.needs_critic else None, generator=neg_gen,
                      mine_permutation=state["perm"], update_ema=state["calls"] == 0)
        state["calls"] += 1
        return bd

    return fn


def cifm_loss(model: Encoder, batch: EncodedBatch, cfg: ObjectiveConfig, *, seeds: tuple[int, int] = (0, 1),
              critic: MineCritic | None = None, generator: torch.Generator | None = None,
              backward: bool = True) -> LossBreakdown:
    """Full objective for one step; backpropagates ``grand_total`` when ``backward``.

    With ``cfg.cim`` absent this is exactly the IFM loss (the w/o-CIM ablation).
    """
    fn = make_ifm_loss_fn(cfg, seeds, critic=critic, generator=generator)
    result = cim_step(model, batch, cfg.cim, fn, generator=generator, backward=backward)
    bd = result.perturbed if result.applied else result.clean
    bd.cim_applied = result.applied
    bd.grand_total = result.loss
    bd.extras = {"clean_ifm_total": float(result.clean.ifm_total.detach()), "degenerate": result.degenerate,
                 "delta_norms": result.delta_norms}
    return bd
