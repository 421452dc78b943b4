"""Composite objective: L = L_S + lambda * L_T + gamma * L_A."""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from ..errors import InvalidSpec, NonFiniteTerm
from .discriminator import DomainDiscriminator

# pretraining-to-joint weights reported to work best
DEFAULT_LAMBDA = 1.0
DEFAULT_GAMMA = 0.5
LABEL_POS_WEIGHT_RANGE = (1.0, 20.0)
ADAPT_ROUTE = "source"


@dataclass
class LossWeights:
    lam: float = DEFAULT_LAMBDA
    gamma: float = DEFAULT_GAMMA
    values: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise InvalidSpec("lambda and gamma must be >= 0")


def _finite(x) -> bool:
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return math.isfinite(x)


def total_loss(l_s, l_t, l_a, weights: LossWeights):
    """Exact weighted sum ``l_s + lam * l_t + gamma * l_a``."""
    for name, v in (("L_S", l_s), ("L_T", l_t), ("L_A", l_a)):
        if not _finite(v):
            raise NonFiniteTerm(f"{name} is not finite")
    return l_s + weights.lam * l_t + weights.gamma * l_a


def label_pos_weight(labels: torch.Tensor, lo=LABEL_POS_WEIGHT_RANGE[0], hi=LABEL_POS_WEIGHT_RANGE[1]):
    """Per-label inverse prevalence N / positives, clamped to [lo, hi]."""
    pos = labels.sum(dim=0)
    inv = torch.where(pos > 0, labels.shape[0] / pos.clamp_min(1.0), torch.full_like(pos, hi))
    return inv.clamp(lo, hi)


def target_loss(logits: torch.Tensor, labels: torch.Tensor, pos_weight: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, labels, pos_weight=pos_weight)


@contextlib.contextmanager
def frozen(module: torch.nn.Module):
    """Temporarily exclude a module's parameters from autograd."""
    flags = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield module
    finally:
        for p, f in zip(module.parameters(), flags):
            p.requires_grad_(f)


def disc_loss(disc: DomainDiscriminator, source_vec: torch.Tensor, target_vec: torch.Tensor) -> torch.Tensor:
    """BCE pushing source -> 1 and target -> 0, averaged over both batches.
    Inputs are detached so only the discriminator receives gradient."""
    ls = disc(source_vec.detach(), "source")
    lt = disc(target_vec.detach(), "target")
    logits = torch.cat([ls, lt])
    labels = torch.cat([torch.ones_like(ls), torch.zeros_like(lt)])
    return F.binary_cross_entropy_with_logits(logits, labels)


def adapt_loss(disc: DomainDiscriminator, target_vec: torch.Tensor, route: str = ADAPT_ROUTE) -> torch.Tensor:
    """BCE pushing target features toward the source label; the discriminator
    is frozen so gradient reaches only the encoders.

    ``route`` picks the normalisation branch the target vectors are scored
    through. Scored through the source branch, the encoders must make target
    features pass as source ones; through the target branch a discriminator
    with per-domain affine parameters can separate the domains from the tag
    alone. Routing through another domain's branch never updates that
    branch's running statistics.
    """
    with frozen(disc):
        lt = disc(target_vec, route, track=route == "target")
    return F.binary_cross_entropy_with_logits(lt, torch.ones_like(lt))


def adversarial_losses(disc, source_vec, target_vec):
    return disc_loss(disc, source_vec, target_vec), adapt_loss(disc, target_vec)
