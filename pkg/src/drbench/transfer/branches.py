"""Source (dense U-Net) and target (dense multi-label classifier) branches
joined by multi-scale transfer connections."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..data.types import DISEASES, LESIONS
from ..errors import InvalidSpec, ScaleMismatch
from ..rng import torch_seeded
from ..segnet.blocks import DenseBlock, Transition, conv_bn_relu
from ..segnet.models import DenseUNet, SegModelConfig, build_segmentation_model


@dataclass
class FeaturePyramid:
    """Per-scale feature maps (finest first, coarsest last) and the pooled
    bottleneck vector."""

    maps: list[torch.Tensor]
    vector: torch.Tensor | None = None


def source_config(depth=3, base_channels=8, growth_rate=8, dense_layers=2, input_size=64) -> SegModelConfig:
    return SegModelConfig(
        variant="dense",
        depth=depth,
        base_channels=base_channels,
        growth_rate=growth_rate,
        dense_layers=dense_layers,
        input_size=input_size,
        out_channels=len(LESIONS),
    )


def build_source_branch(config: SegModelConfig, seed: int = 0) -> DenseUNet:
    if config.variant != "dense":
        raise InvalidSpec("the source branch is a dense U-Net")
    return build_segmentation_model(config, seed)


def source_pyramid(source: DenseUNet, images: torch.Tensor) -> FeaturePyramid:
    _, maps, bott = source.encode(images)
    return FeaturePyramid(maps, bott.mean(dim=(2, 3)))


def _fuse_scale(source_map: torch.Tensor, target_map: torch.Tensor) -> torch.Tensor:
    if source_map.shape[0] != target_map.shape[0] or source_map.shape[-2:] != target_map.shape[-2:]:
        raise ScaleMismatch(
            f"cannot concatenate source {tuple(source_map.shape)} with target {tuple(target_map.shape)}"
        )
    return torch.cat([target_map, source_map], dim=1)


def multi_scale_transfer(source: FeaturePyramid, target: FeaturePyramid) -> FeaturePyramid:
    """Channel-wise concatenation per scale: target channels first, then source."""
    if len(source.maps) != len(target.maps):
        raise ScaleMismatch(f"{len(source.maps)} source scales vs {len(target.maps)} target scales")
    return FeaturePyramid([_fuse_scale(s, t) for s, t in zip(source.maps, target.maps)], target.vector)


@dataclass(frozen=True)
class TargetBranchConfig:
    depth: int = 3
    base_channels: int = 8
    growth_rate: int = 8
    dense_layers: int = 2
    input_size: int = 64
    num_labels: int = len(DISEASES)
    transfer: bool = True
    source_channels: tuple[int, ...] = field(default_factory=tuple)
    bottleneck_channels: int = 16

    def validate(self) -> None:
        if self.transfer and len(self.source_channels) != self.depth:
            raise ScaleMismatch(f"transfer needs {self.depth} source scales, got {len(self.source_channels)}")
        if self.input_size % (2**self.depth):
            raise InvalidSpec(f"input_size {self.input_size} not divisible by 2^{self.depth}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source_channels"] = list(self.source_channels)
        return d


def target_config_for(source: DenseUNet, transfer: bool = True) -> TargetBranchConfig:
    """Target backbone mirroring the source's stage layout, with a bottleneck
    the same width as the source's so the discriminator sees equal vectors."""
    c = source.config
    return TargetBranchConfig(
        depth=c.depth,
        base_channels=c.base_channels,
        growth_rate=c.growth_rate,
        dense_layers=c.dense_layers,
        input_size=c.input_size,
        transfer=transfer,
        source_channels=tuple(source.pyramid_channels) if transfer else (),
        bottleneck_channels=source.bottleneck_channels,
    )


class TargetBranch(nn.Module):
    """Dense encoder -> GAP -> 8 sigmoid outputs.

    With ``transfer`` on, the source pyramid map at each scale is
    concatenated onto this branch's transition output before the next dense
    block sees it.
    """

    def __init__(self, config: TargetBranchConfig):
        super().__init__()
        config.validate()
        self.config = config
        L, k = config.dense_layers, config.growth_rate
        self.stem = conv_bn_relu(3, config.base_channels)
        self.blocks = nn.ModuleList()
        self.transitions = nn.ModuleList()
        self.pyramid_channels = []
        c = config.base_channels
        for s in range(config.depth):
            block = DenseBlock(c, L, k)
            trans = Transition(block.out_channels, block.out_channels // 2)
            self.blocks.append(block)
            self.transitions.append(trans)
            self.pyramid_channels.append(trans.out_channels)
            c = trans.out_channels + (config.source_channels[s] if config.transfer else 0)
        self.mid_block = DenseBlock(c, L, k)
        self.extra_transition = Transition(self.mid_block.out_channels, config.bottleneck_channels, pool=False)
        self.head = nn.Linear(config.bottleneck_channels, config.num_labels)

    def features(self, x: torch.Tensor, source: FeaturePyramid | None = None):
        """Return (own pyramid, final feature map)."""
        if self.config.transfer:
            if source is None:
                raise ScaleMismatch("transfer-enabled target branch needs source features")
            if len(source.maps) != self.config.depth:
                raise ScaleMismatch(f"{len(source.maps)} source scales vs {self.config.depth}")
        y = self.stem(x)
        own = []
        for s, (block, trans) in enumerate(zip(self.blocks, self.transitions)):
            y = trans(block(y))
            own.append(y)
            if self.config.transfer:
                y = _fuse_scale(source.maps[s], y)
        return own, self.extra_transition(self.mid_block(y))

    def forward(self, x: torch.Tensor, source: FeaturePyramid | None = None):
        """Return (label logits [N, 8], pooled bottleneck vector [N, C])."""
        _, fmap = self.features(x, source)
        vec = fmap.mean(dim=(2, 3))
        return self.head(vec), vec

    def pyramid(self, x, source: FeaturePyramid | None = None) -> FeaturePyramid:
        own, fmap = self.features(x, source)
        return FeaturePyramid(own, fmap.mean(dim=(2, 3)))

    @torch.no_grad()
    def logit_map(self, x: torch.Tensor, label: int, source: FeaturePyramid | None = None) -> torch.Tensor:
        """Pre-pooling response of one label's head over the final feature map
        ([N, h, w]); its spatial mean equals that label's logit."""
        _, fmap = self.features(x, source)
        return logit_map_from_features(fmap, self.head.weight[label], self.head.bias[label])


def logit_map_from_features(fmap: torch.Tensor, weight: torch.Tensor, bias) -> torch.Tensor:
    """Per-location head response ``w . f(h, w) + b`` over [N, C, h, w] features."""
    return torch.einsum("c,nchw->nhw", weight, fmap) + bias


def build_target_branch(config: TargetBranchConfig, seed: int = 0) -> TargetBranch:
    with torch_seeded(seed, "init/target"):
        model = TargetBranch(config)
    model.seed = seed
    return model


def normalized_logit_map(target: TargetBranch, image: torch.Tensor, label: int, source=None, upsample=True):
    """Min-max normalised logit map for one image, upsampled to input size."""
    if image.dim() == 3:
        image = image[None]
    was = target.training
    target.eval()
    pyr = None
    if target.config.transfer:
        if source is None:
            raise ScaleMismatch("transfer-enabled target branch needs the source branch")
        source.eval()
        with torch.no_grad():
            pyr = source_pyramid(source, image)
    m = target.logit_map(image, label, pyr)[0]
    target.train(was)
    if upsample:
        m = F.interpolate(m[None, None], size=image.shape[-2:], mode="bilinear", align_corners=False)[0, 0]
    lo, hi = m.min(), m.max()
    m = torch.zeros_like(m) if hi - lo <= 0 else (m - lo) / (hi - lo)
    return m.numpy()
