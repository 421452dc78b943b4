"""DR grading classifiers with optional lesion fusion and LM/PM auxiliary heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..data.types import LESIONS, NUM_GRADES
from ..errors import InvalidSpec
from ..rng import torch_seeded
from ..segnet.blocks import DenseBlock, Transition, conv_bn_relu
from ..segnet.models import SegModel

BACKBONES = ("small-cnn", "dense-backbone")
FUSIONS = ("none", "lesion-mask-concat", "lesion-feature-concat")


@dataclass(frozen=True)
class GradeModelConfig:
    backbone: str = "small-cnn"
    num_stages: int = 3
    base_channels: int = 8
    growth_rate: int = 8
    fusion: str = "none"
    aux_heads: bool = False
    input_size: int = 64

    def validate(self) -> None:
        if self.backbone not in BACKBONES:
            raise InvalidSpec(f"unknown backbone {self.backbone!r}")
        if self.fusion not in FUSIONS:
            raise InvalidSpec(f"unknown fusion {self.fusion!r}")
        if self.num_stages < 1 or self.base_channels < 1:
            raise InvalidSpec("num_stages and base_channels must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GradePrediction:
    logits: np.ndarray
    grade: int
    aux: dict[str, float] | None = None


def _small_cnn(cin, base, stages):
    layers, c = [], cin
    for i in range(stages):
        cout = base * 2**i
        layers += [conv_bn_relu(c, cout), conv_bn_relu(cout, cout)]
        if i < stages - 1:
            layers.append(nn.MaxPool2d(2))
        c = cout
    return nn.Sequential(*layers), c


def _dense_backbone(cin, base, growth, stages):
    layers = [conv_bn_relu(cin, base)]
    c = base
    for i in range(stages):
        block = DenseBlock(c, 2, growth)
        layers.append(block)
        trans = Transition(block.out_channels, block.out_channels // 2, pool=i < stages - 1)
        layers.append(trans)
        c = trans.out_channels
    return nn.Sequential(*layers), c


class GradeModel(nn.Module):
    """encoder -> global average pooling -> 5-way linear head (+ 2 sigmoid aux heads).

    With fusion enabled the frozen segmentation model either contributes its
    six lesion probability maps as extra input channels (mask-concat) or its
    pooled bottleneck features next to the classifier's (feature-concat).
    """

    def __init__(self, config: GradeModelConfig, seg_model: SegModel | None = None):
        super().__init__()
        config.validate()
        if config.fusion != "none":
            if seg_model is None:
                raise InvalidSpec(f"fusion {config.fusion!r} needs a trained segmentation model")
            if config.fusion == "lesion-mask-concat" and seg_model.config.out_channels != len(LESIONS):
                raise InvalidSpec("mask-concat fusion needs a segmentation model with 6 lesion outputs")
        self.config = config
        in_ch = 3 + (len(LESIONS) if config.fusion == "lesion-mask-concat" else 0)
        if config.backbone == "small-cnn":
            self.encoder, self.feature_dim = _small_cnn(in_ch, config.base_channels, config.num_stages)
        else:
            self.encoder, self.feature_dim = _dense_backbone(
                in_ch, config.base_channels, config.growth_rate, config.num_stages
            )
        extra = seg_model.vector_size if config.fusion == "lesion-feature-concat" else 0
        self.head = nn.Linear(self.feature_dim + extra, NUM_GRADES)
        # built last so enabling it does not shift the initialisation of the rest
        self.aux = nn.Linear(self.feature_dim + extra, 2) if config.aux_heads else None
        self.seg_model = seg_model if config.fusion != "none" else None
        if self.seg_model is not None:
            for p in self.seg_model.parameters():
                p.requires_grad_(False)
            self.seg_model.eval()

    def train(self, mode: bool = True):
        super().train(mode)
        if self.seg_model is not None:
            self.seg_model.eval()
        return self

    def trainable_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("seg_model.")]

    @torch.no_grad()
    def prepare(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Classifier input and optional seg feature vector for a batch; the
        seg model is frozen, so this can be computed once per dataset."""
        return fuse_lesion_inputs(images, self.seg_model, self.config.fusion)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Final convolutional feature maps (pre-pooling)."""
        return self.encoder(x)

    def forward_prepared(self, x, seg_vec=None):
        pooled = self.features(x).mean(dim=(2, 3))
        if seg_vec is not None:
            pooled = torch.cat([pooled, seg_vec], dim=1)
        logits = self.head(pooled)
        aux = self.aux(pooled) if self.aux is not None else None
        return logits, aux

    def forward(self, images):
        return self.forward_prepared(*self.prepare(images))


def fuse_lesion_inputs(images: torch.Tensor, seg_model: SegModel | None, mode: str):
    """mask-concat: image + 6 predicted lesion maps -> [N, 9, H, W].
    feature-concat: (image, pooled seg bottleneck [N, C]).
    Maps are bilinearly resized when the seg model runs at another resolution."""
    if mode == "none" or seg_model is None:
        return images, None
    size = seg_model.config.input_size
    seg_in = images
    if images.shape[-1] != size or images.shape[-2] != size:
        seg_in = F.interpolate(images, size=(size, size), mode="bilinear", align_corners=False)
    with torch.no_grad():
        if mode == "lesion-mask-concat":
            maps = seg_model(seg_in)
            if maps.shape[-2:] != images.shape[-2:]:
                maps = F.interpolate(maps, size=images.shape[-2:], mode="bilinear", align_corners=False)
            return torch.cat([images, maps], dim=1), None
        if mode == "lesion-feature-concat":
            return images, seg_model.encode_vector(seg_in)
    raise InvalidSpec(f"unknown fusion {mode!r}")


def build_grading_model(config: GradeModelConfig, seg_model: SegModel | None = None, seed: int = 0) -> GradeModel:
    with torch_seeded(seed, "init"):
        model = GradeModel(config, seg_model)
    model.seed = seed
    return model


def to_predictions(logits: torch.Tensor, aux: torch.Tensor | None = None) -> list[GradePrediction]:
    """Argmax grades with lowest-index tie-break."""
    lg = logits.detach().double().numpy()
    probs = torch.sigmoid(aux).detach().double().numpy() if aux is not None else None
    out = []
    for i, row in enumerate(lg):
        extra = {"LM": float(probs[i, 0]), "PM": float(probs[i, 1])} if probs is not None else None
        out.append(GradePrediction(row, int(np.argmax(row)), extra))
    return out
