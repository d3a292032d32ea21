"""Residual backbone with spatial group-wise enhancement (SGE)."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class BackboneConfig:
    stage_widths: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    blocks_per_stage: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    sge_groups: int = 8
    sge_eps: float = 1e-5
    in_channels: int = 3

    def __post_init__(self):
        self.stage_widths = [int(w) for w in self.stage_widths]
        self.blocks_per_stage = [int(b) for b in self.blocks_per_stage]
        if len(self.stage_widths) != len(self.blocks_per_stage) or not self.stage_widths:
            raise ValueError("stage_widths and blocks_per_stage must be nonempty and of equal length")

    @property
    def total_stride(self) -> int:
        # stem conv (2) * max-pool (2) * one stride-2 transition per later stage
        return 4 * 2 ** (len(self.stage_widths) - 1)

    @property
    def feature_channels(self) -> int:
        return self.stage_widths[-1]


def sge_enhance(x: torch.Tensor, groups: int, gamma: torch.Tensor, beta: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Spatial group-wise enhancement.

    For each channel group, every position's feature vector is scored by its dot
    product with the group's spatially pooled descriptor.  Scores are
    standardised over positions (population variance, ``eps`` inside the root),
    scaled by ``gamma``/shifted by ``beta`` per group, and passed through a
    sigmoid to gate the features.
    """
    b, c, h, w = x.shape
    if c % groups:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    xg = x.reshape(b, groups, c // groups, h, w)
    pooled = xg.mean(dim=(3, 4), keepdim=True)
    attn = (xg * pooled).sum(dim=2)  # [b, g, h, w]
    flat = attn.reshape(b, groups, h * w)
    mu = flat.mean(dim=2, keepdim=True)
    var = ((flat - mu) ** 2).mean(dim=2, keepdim=True)
    norm = ((flat - mu) / torch.sqrt(var + eps)).reshape(b, groups, h, w)
    gate = torch.sigmoid(norm * gamma.reshape(1, groups, 1, 1) + beta.reshape(1, groups, 1, 1))
    return (xg * gate.unsqueeze(2)).reshape(b, c, h, w)


class SpatialGroupEnhance(nn.Module):
    def __init__(self, groups: int = 8, eps: float = 1e-5):
        super().__init__()
        self.groups = groups
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(groups))
        self.beta = nn.Parameter(torch.zeros(groups))

    def forward(self, x):
        return sge_enhance(x, self.groups, self.gamma, self.beta, self.eps)


class Stem(nn.Module):
    """3x3 stride-2 conv, BN, ReLU, 3x3 stride-2 max-pool: overall stride 4."""

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        self.in_channels = in_channels
        self.conv = nn.Conv2d(in_channels, width, 3, 2, 1, bias=False)
        self.bn = nn.BatchNorm2d(width)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"stem expects {self.in_channels} input channels, got {x.shape[1]}")
        return F.max_pool2d(F.relu(self.bn(self.conv(x))), 3, 2, 1)


def shortcut(in_ch: int, out_ch: int, stride: int) -> nn.Module:
    if stride == 1 and in_ch == out_ch:
        return nn.Identity()
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride, bias=False), nn.BatchNorm2d(out_ch))


class BasicBlock(nn.Module):
    """Two 3x3 convolutions with a residual shortcut; optional SGE after the second BN."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, sge_groups: int | None = None, sge_eps: float = 1e-5):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.sge = SpatialGroupEnhance(sge_groups, sge_eps) if sge_groups else None
        self.shortcut = shortcut(in_ch, out_ch, stride)

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        if self.sge is not None:
            out = self.sge(out)
        return F.relu(out + self.shortcut(x))


def make_stages(widths, blocks, block_fn) -> nn.Sequential:
    """``block_fn(in_ch, out_ch, stride)``; first stage keeps resolution, later ones halve it."""
    layers = []
    in_ch = widths[0]
    for s, (w, n) in enumerate(zip(widths, blocks)):
        for i in range(n):
            layers.append(block_fn(in_ch, w, 2 if (s > 0 and i == 0) else 1))
            in_ch = w
    return nn.Sequential(*layers)


class ResNetBackbone(nn.Module):
    def __init__(self, config: BackboneConfig, use_sge: bool = True):
        super().__init__()
        self.config = config
        groups = config.sge_groups if use_sge else None
        self.stem = Stem(config.in_channels, config.stage_widths[0])
        self.stages = make_stages(
            config.stage_widths,
            config.blocks_per_stage,
            lambda i, o, s: BasicBlock(i, o, s, groups, config.sge_eps),
        )

    def forward(self, images):
        side = images.shape[-1]
        stride = self.config.total_stride
        if images.shape[-2] % stride or side % stride:
            raise ValueError(f"input size {tuple(images.shape[-2:])} not divisible by total stride {stride}")
        return self.stages(self.stem(images))
