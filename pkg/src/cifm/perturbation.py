"""Conditional information minimization as norm-bounded weight perturbation.

Training: one fast-gradient step on the weights of the targeted parameter
groups (embedding + first hidden layer by default), loss recomputed under the
perturbed weights, gradients taken there, weights restored exactly.

Evaluation: Gaussian or fast-gradient noise added to the embedding-layer
output at a fixed per-sample L2 strength.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable

import torch

from .errors import ConfigError, ConsistencyError, UsageError

GRAD_NORM_FLOOR = 1e-12


@dataclass
class PerturbationSpec:
    epsilon: float = 0.1
    rate: float = 1.0
    norm: str = "l2"
    target_groups: tuple[str, ...] = ("embedding", "layer.0")
    # None: train on the perturbed loss alone; w: train on clean + w * perturbed
    weight: float | None = None

    def __post_init__(self):
        self.target_groups = tuple(self.target_groups)
        if not self.epsilon > 0:
            raise ConfigError(f"cim.epsilon must be > 0, got {self.epsilon}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"cim.rate must lie in [0, 1], got {self.rate}")
        if self.norm not in ("l2", "2", 2):
            raise ConfigError(f"only the L2 norm is supported, got {self.norm!r}")
        if not self.target_groups:
            raise ConfigError("cim.target_groups must not be empty")
        if self.weight is not None and self.weight < 0:
            raise ConfigError("cim.weight must be >= 0")


# group name -> list of per-parameter gradient tensors
GradientSnapshot = dict


def fgm_delta(g: GradientSnapshot, spec: PerturbationSpec) -> tuple[dict[str, list[torch.Tensor]], bool]:
    """delta = -epsilon * g / ||g||_2 per group; returns (deltas, degenerate).

    ``g`` is the gradient of the objective being *maximized* (log-likelihood
    side), so the delta moves against it. Groups whose gradient norm is at or
    below the floor get a zero delta; ``degenerate`` is True when all do.
    """
    deltas = {}
    degenerate = True
    for name, grads in g.items():
        norm = torch.sqrt(sum((t.detach().to(torch.float64) ** 2).sum() for t in grads))
        if norm > GRAD_NORM_FLOOR:
            degenerate = False
            scale = spec.epsilon / norm
            deltas[name] = [(-scale * t.detach().to(torch.float64)).to(t.dtype) for t in grads]
        else:
            deltas[name] = [torch.zeros_like(t) for t in grads]
    return deltas, degenerate


def _target_params(model, spec: PerturbationSpec) -> dict[str, list[torch.nn.Parameter]]:
    return {name: model.named_group(name) for name in spec.target_groups}


@contextlib.contextmanager
def perturbed_weights(model, deltas: dict[str, list[torch.Tensor]]):
    """Temporarily add deltas to the named groups; restores bit-exact copies on exit."""
    params = {name: model.named_group(name) for name in deltas}
    backup = {id(p): p.detach().clone() for plist in params.values() for p in plist}
    try:
        with torch.no_grad():
            for name, plist in params.items():
                for p, d in zip(plist, deltas[name]):
                    p.add_(d)
        yield
    finally:
        with torch.no_grad():
            for plist in params.values():
                for p in plist:
                    p.copy_(backup[id(p)])
        for plist in params.values():
            for p in plist:
                if not torch.equal(p.detach(), backup[id(p)]):
                    raise ConsistencyError("weight restoration mismatch after perturbation")


@dataclass
class CIMResult:
    loss: torch.Tensor            # the loss that was backpropagated (detached)
    clean: object                 # output of ifm_loss_fn at clean weights
    perturbed: object | None      # output at perturbed weights, if applied
    applied: bool
    degenerate: bool = False
    delta_norms: dict[str, float] = field(default_factory=dict)


def _total(out) -> torch.Tensor:
    return out if isinstance(out, torch.Tensor) else out.ifm_total


def cim_step(model, batch, spec: PerturbationSpec | None, ifm_loss_fn: Callable, *,
             generator: torch.Generator | None = None, backward: bool = True) -> CIMResult:
    """One CIM-regularized loss evaluation.

    ``ifm_loss_fn(model, batch)`` must be deterministic (fixed dropout seeds)
    and return a tensor or an object with ``ifm_total``. With probability
    ``spec.rate`` the loss is re-evaluated at weights moved by the FGM delta;
    gradients (when ``backward``) are taken there and the weights are restored
    before returning, so the caller's optimizer step applies perturbed-pass
    gradients to the original weights.
    """
    clean = ifm_loss_fn(model, batch)
    clean_total = _total(clean)
    applied = False
    if spec is not None:
        draw = torch.rand((), generator=generator)
        applied = bool(draw < spec.rate)
    if not applied:
        if backward:
            clean_total.backward()
        return CIMResult(clean_total.detach(), clean, None, False)

    groups = _target_params(model, spec)
    flat = [p for plist in groups.values() for p in plist]
    keep_graph = spec.weight is not None and backward
    loss_grads = torch.autograd.grad(clean_total, flat, retain_graph=keep_graph, allow_unused=True)
    snapshot, i = {}, 0
    for name, plist in groups.items():
        # gradient of the maximization-form objective, i.e. of -L_IFM
        snapshot[name] = [(-gr if gr is not None else torch.zeros_like(p)) for p, gr in zip(plist, loss_grads[i:i + len(plist)])]
        i += len(plist)
    deltas, degenerate = fgm_delta(snapshot, spec)

    if keep_graph:
        clean_total.backward()
    with perturbed_weights(model, deltas):
        perturbed = ifm_loss_fn(model, batch)
        pert_total = _total(perturbed)
        total = pert_total if spec.weight is None else clean_total.detach() + spec.weight * pert_total
        if backward:
            (pert_total if spec.weight is None else spec.weight * pert_total).backward()
    norms = {name: float(torch.sqrt(sum((d.to(torch.float64) ** 2).sum() for d in dl))) for name, dl in deltas.items()}
    return CIMResult(total.detach(), clean, perturbed, True, degenerate, norms)


def test_time_perturb(embeddings: torch.Tensor, kind: str, strength: float, grad: torch.Tensor | None = None, *,
                      generator: torch.Generator | None = None, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Add per-sample L2-scaled noise to embeddings ([N, ...]; each leading row is one sample).

    ``random`` draws Gaussian noise (restricted to ``mask`` positions when given)
    and rescales it to norm ``strength``; ``adversarial`` adds
    ``strength * grad / ||grad||`` where ``grad`` is the loss gradient.
    """
    if strength < 0:
        raise UsageError("strength must be >= 0")
    if kind not in ("random", "adversarial"):
        raise UsageError(f"unknown perturbation kind {kind!r}")
    if strength == 0:
        return embeddings.clone()
    if kind == "adversarial" and grad is None:
        raise UsageError("adversarial perturbation requires grad")
    n = embeddings.shape[0]
    if kind == "random":
        direction = torch.randn(embeddings.shape, generator=generator, dtype=embeddings.dtype)
        if mask is not None:
            direction = direction * mask.reshape(mask.shape + (1,) * (embeddings.dim() - mask.dim())).to(direction.dtype)
    else:
        direction = grad.detach().to(embeddings.dtype)
    norms = direction.reshape(n, -1).norm(dim=1).clamp_min(GRAD_NORM_FLOOR)
    scale = (strength / norms).reshape((n,) + (1,) * (embeddings.dim() - 1))
    return embeddings + direction * scale


test_time_perturb.__test__ = False  # keep pytest from collecting it by name
