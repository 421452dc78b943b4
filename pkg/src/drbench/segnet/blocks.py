"""Convolutional building blocks shared by the segmentation, grading and
transfer networks."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def conv_bn_relu(cin: int, cout: int, k: int = 3) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, padding=k // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class DoubleConv(nn.Sequential):
    def __init__(self, cin: int, cout: int):
        super().__init__(conv_bn_relu(cin, cout), conv_bn_relu(cout, cout))


class DenseLayer(nn.Module):
    def __init__(self, cin: int, growth: int):
        super().__init__()
        self.bn = nn.BatchNorm2d(cin)
        self.conv = nn.Conv2d(cin, growth, 3, padding=1, bias=False)

    def forward(self, x):
        return torch.cat([x, self.conv(F.relu(self.bn(x)))], dim=1)


class DenseBlock(nn.Sequential):
    """``n_layers`` densely connected BN-ReLU-Conv layers; output channels are
    ``cin + n_layers * growth``."""

    def __init__(self, cin: int, n_layers: int, growth: int):
        super().__init__(*[DenseLayer(cin + i * growth, growth) for i in range(n_layers)])
        self.out_channels = cin + n_layers * growth


class Transition(nn.Sequential):
    """BN-ReLU-1x1 conv, optionally followed by 2x average pooling."""

    def __init__(self, cin: int, cout: int, pool: bool = True):
        layers = [nn.BatchNorm2d(cin), nn.ReLU(inplace=True), nn.Conv2d(cin, cout, 1, bias=False)]
        if pool:
            layers.append(nn.AvgPool2d(2))
        super().__init__(*layers)
        self.out_channels = cout


class UpUnit(nn.Module):
    """2x bilinear upsampling followed by a 3x3 conv."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = conv_bn_relu(cin, cout)

    def forward(self, x, size=None):
        if size is None:
            size = (x.shape[-2] * 2, x.shape[-1] * 2)
        return self.conv(F.interpolate(x, size=size, mode="bilinear", align_corners=False))
