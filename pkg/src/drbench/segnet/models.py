"""U-Net family: plain, multi-class, attention-gated and dense variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import InvalidSpec, ShapeMismatch
from ..rng import torch_seeded
from .blocks import DenseBlock, DoubleConv, Transition, UpUnit, conv_bn_relu

VARIANTS = ("plain", "multiclass", "attention", "dense")


@dataclass(frozen=True)
class SegModelConfig:
    variant: str = "plain"
    depth: int = 3
    base_channels: int = 8
    growth_rate: int = 8
    dense_layers: int = 2
    input_size: int = 128
    out_channels: int = 1

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise InvalidSpec(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.depth < 1 or self.base_channels < 1 or self.growth_rate < 1 or self.dense_layers < 1:
            raise InvalidSpec("depth, channel counts and dense_layers must be positive")
        if self.input_size % (2**self.depth):
            raise InvalidSpec(f"input_size {self.input_size} not divisible by 2^{self.depth}")
        if self.variant == "multiclass" and self.out_channels != 6:
            raise InvalidSpec("multiclass variant needs out_channels = 6")
        if self.variant in ("plain", "attention") and self.out_channels != 1:
            raise InvalidSpec(f"{self.variant} variant is single-lesion (out_channels = 1)")
        if self.variant == "dense" and self.out_channels not in (1, 6):
            raise InvalidSpec("dense variant takes out_channels 1 or 6")

    def to_dict(self) -> dict:
        return asdict(self)


class SegModel(nn.Module):
    """Base for segmentation networks. ``forward`` returns sigmoid
    probabilities; training uses ``forward_logits``."""

    config: SegModelConfig

    def forward_logits(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forward_logits(x))

    def bottleneck(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def encode_vector(self, x: torch.Tensor) -> torch.Tensor:
        """Globally average-pooled bottleneck features, [N, C]."""
        return self.bottleneck(x).mean(dim=(2, 3))

    @property
    def vector_size(self) -> int:
        raise NotImplementedError

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


class AttentionGate(nn.Module):
    """Additive attention gate: the skip features are scaled by a field in
    [0, 1] computed from the skip and the coarser gating features."""

    def __init__(self, skip_channels: int, gate_channels: int, inter_channels: int):
        super().__init__()
        self.theta = nn.Conv2d(skip_channels, inter_channels, 1, bias=False)
        self.phi = nn.Conv2d(gate_channels, inter_channels, 1)
        self.psi = nn.Conv2d(inter_channels, 1, 1)

    def field(self, skip: torch.Tensor, gating: torch.Tensor) -> torch.Tensor:
        if skip.shape[0] != gating.shape[0]:
            raise ShapeMismatch("skip and gating batches differ")
        (hs, ws), (hg, wg) = skip.shape[-2:], gating.shape[-2:]
        if hg > hs or wg > ws or hs % hg or ws % wg:
            raise ShapeMismatch(f"gating {hg}x{wg} is not a coarser grid of skip {hs}x{ws}")
        g = F.interpolate(self.phi(gating), size=(hs, ws), mode="bilinear", align_corners=False)
        return torch.sigmoid(self.psi(F.relu(self.theta(skip) + g)))

    def forward(self, skip: torch.Tensor, gating: torch.Tensor) -> torch.Tensor:
        return skip * self.field(skip, gating)


def attention_gate(skip: torch.Tensor, gating: torch.Tensor, gate: AttentionGate) -> torch.Tensor:
    return gate(skip, gating)


class UNet(SegModel):
    def __init__(self, config: SegModelConfig):
        super().__init__()
        self.config = config
        ch = [config.base_channels * 2**i for i in range(config.depth + 1)]
        self.channels = ch
        self.inc = DoubleConv(3, ch[0])
        self.downs = nn.ModuleList(
            nn.Sequential(nn.MaxPool2d(2), DoubleConv(ch[i - 1], ch[i])) for i in range(1, config.depth + 1)
        )
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(ch[i], ch[i - 1], 2, stride=2) for i in range(1, config.depth + 1)
        )
        self.gates = None
        if config.variant == "attention":
            self.gates = nn.ModuleList(
                AttentionGate(ch[i - 1], ch[i], max(ch[i - 1] // 2, 1)) for i in range(1, config.depth + 1)
            )
        self.decs = nn.ModuleList(DoubleConv(2 * ch[i - 1], ch[i - 1]) for i in range(1, config.depth + 1))
        self.head = nn.Conv2d(ch[0], config.out_channels, 1)

    def _encode(self, x):
        feats = [self.inc(x)]
        for down in self.downs:
            feats.append(down(feats[-1]))
        return feats

    def forward_logits(self, x):
        feats = self._encode(x)
        y = feats[-1]
        for i in range(self.config.depth, 0, -1):
            skip = feats[i - 1]
            if self.gates is not None:
                skip = self.gates[i - 1](skip, y)
            y = self.decs[i - 1](torch.cat([skip, self.ups[i - 1](y)], dim=1))
        return self.head(y)

    def bottleneck(self, x):
        return self._encode(x)[-1]

    @property
    def vector_size(self) -> int:
        return self.channels[-1]


class DenseUNet(SegModel):
    """Dense encoder (dense block + pooling transition per stage), a bottleneck
    dense block closed by one extra non-pooling transition, and a decoder of
    upsample+conv units joined to the dense-block skips.

    ``encode`` exposes the feature pyramid: the output of each stage's
    transition, so scale ``s`` (1-based) has spatial size input / 2**s.
    """

    def __init__(self, config: SegModelConfig):
        super().__init__()
        self.config = config
        L, k = config.dense_layers, config.growth_rate
        self.stem = conv_bn_relu(3, config.base_channels)
        c = config.base_channels
        self.blocks = nn.ModuleList()
        self.transitions = nn.ModuleList()
        self.skip_channels, self.pyramid_channels = [], []
        for _ in range(config.depth):
            block = DenseBlock(c, L, k)
            self.blocks.append(block)
            self.skip_channels.append(block.out_channels)
            trans = Transition(block.out_channels, block.out_channels // 2)
            self.transitions.append(trans)
            c = trans.out_channels
            self.pyramid_channels.append(c)
        self.mid_block = DenseBlock(c, L, k)
        self.extra_transition = Transition(self.mid_block.out_channels, self.mid_block.out_channels // 2, pool=False)
        self.bottleneck_channels = self.extra_transition.out_channels
        c = self.bottleneck_channels
        self.ups = nn.ModuleList()
        self.fuses = nn.ModuleList()
        for s in range(config.depth - 1, -1, -1):
            sc = self.skip_channels[s]
            self.ups.append(UpUnit(c, sc))
            self.fuses.append(conv_bn_relu(2 * sc, sc))
            c = sc
        self.head = nn.Conv2d(c, config.out_channels, 1)

    def encode(self, x):
        """Return (skips, pyramid, bottleneck map)."""
        y = self.stem(x)
        skips, pyramid = [], []
        for block, trans in zip(self.blocks, self.transitions):
            y = block(y)
            skips.append(y)
            y = trans(y)
            pyramid.append(y)
        return skips, pyramid, self.extra_transition(self.mid_block(y))

    def decode(self, skips, bottleneck):
        y = bottleneck
        for up, fuse, skip in zip(self.ups, self.fuses, reversed(skips)):
            y = fuse(torch.cat([skip, up(y, size=skip.shape[-2:])], dim=1))
        return self.head(y)

    def forward_logits(self, x):
        skips, _, bott = self.encode(x)
        return self.decode(skips, bott)

    def forward_features(self, x):
        """Logits, feature pyramid and pooled bottleneck vector in one pass."""
        skips, pyramid, bott = self.encode(x)
        return self.decode(skips, bott), pyramid, bott.mean(dim=(2, 3))

    def bottleneck(self, x):
        return self.encode(x)[2]

    @property
    def vector_size(self) -> int:
        return self.bottleneck_channels


def build_segmentation_model(config: SegModelConfig, seed: int = 0) -> SegModel:
    config.validate()
    with torch_seeded(seed, "init"):
        model = DenseUNet(config) if config.variant == "dense" else UNet(config)
    model.seed = seed
    return model
