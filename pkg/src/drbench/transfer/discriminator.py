"""Domain discriminator with domain-specific batch normalisation."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import MissingDomainTag
from ..rng import torch_seeded

DOMAINS = ("source", "target")


class DomainSpecificBatchNorm(nn.Module):
    """One BatchNorm2d per domain. ``shared=True`` ties both tags to a single
    BN (the plain adversarial-adaptation ablation)."""

    def __init__(self, num_features: int, shared: bool = False):
        super().__init__()
        self.shared = shared
        if shared:
            self.bns = nn.ModuleDict({"shared": nn.BatchNorm2d(num_features)})
        else:
            self.bns = nn.ModuleDict({d: nn.BatchNorm2d(num_features) for d in DOMAINS})

    def branch(self, domain: str) -> nn.BatchNorm2d:
        if domain not in DOMAINS:
            raise MissingDomainTag(f"domain tag must be one of {DOMAINS}, got {domain!r}")
        return self.bns["shared" if self.shared else domain]

    def forward(self, x, domain, track: bool = True):
        bn = self.branch(domain)
        if track or not self.training:
            return bn(x)
        # batch statistics without touching the branch's running state
        return F.batch_norm(x, None, None, bn.weight, bn.bias, True, 0.0, bn.eps)


class DomainDiscriminator(nn.Module):
    """Two 1x1 convolutions (shared across domains), each followed by
    domain-specific BN and LeakyReLU, then a linear domain-logit head.
    Positive logits mean "source"."""

    def __init__(self, in_features: int, hidden: int = 32, domain_specific: bool = True):
        super().__init__()
        self.in_features = in_features
        self.hidden = hidden
        self.domain_specific = domain_specific
        self.conv1 = nn.Conv2d(in_features, hidden, 1, bias=False)
        self.bn1 = DomainSpecificBatchNorm(hidden, shared=not domain_specific)
        self.conv2 = nn.Conv2d(hidden, hidden, 1, bias=False)
        self.bn2 = DomainSpecificBatchNorm(hidden, shared=not domain_specific)
        self.head = nn.Linear(hidden, 1)

    def forward(self, vec: torch.Tensor, domain: str | None, track: bool = True) -> torch.Tensor:
        """``track=False`` normalises with batch statistics but leaves the
        branch's running statistics untouched."""
        if domain is None:
            raise MissingDomainTag("discriminator needs a domain tag")
        x = vec[:, :, None, None]
        x = F.leaky_relu(self.bn1(self.conv1(x), domain, track), 0.2)
        x = F.leaky_relu(self.bn2(self.conv2(x), domain, track), 0.2)
        return self.head(x.flatten(1)).squeeze(1)

    def norm_state(self, domain: str) -> dict[str, torch.Tensor]:
        """Statistics and affine parameters of one domain's BN branches."""
        out = {}
        for name, dsbn in (("bn1", self.bn1), ("bn2", self.bn2)):
            for k, v in dsbn.branch(domain).state_dict().items():
                out[f"{name}.{k}"] = v.clone()
        return out


def build_discriminator(in_features: int, hidden: int = 32, domain_specific: bool = True, seed: int = 0):
    with torch_seeded(seed, "init/disc"):
        disc = DomainDiscriminator(in_features, hidden, domain_specific)
    disc.seed = seed
    return disc


def discriminate(disc: DomainDiscriminator, feature_vec: torch.Tensor, domain_tag: str | None) -> torch.Tensor:
    if feature_vec.shape[-1] != disc.in_features:
        raise ValueError(f"feature length {feature_vec.shape[-1]} != discriminator input {disc.in_features}")
    return disc(feature_vec, domain_tag)
