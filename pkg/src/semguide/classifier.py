"""Channel-wise (split) attention residual classifier and its plain-convolution twin."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import BasicBlock, Stem, make_stages, shortcut


@dataclass
class SplitAttentionConfig:
    radix: int = 2
    cardinality: int = 1
    stage_widths: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    blocks_per_stage: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    fc_hidden: list[int] = field(default_factory=lambda: [512, 256])
    reduction: int = 4

    def __post_init__(self):
        if self.radix < 1 or self.cardinality < 1:
            raise ValueError("radix and cardinality must be >= 1")
        for w in self.stage_widths:
            if w % (self.radix * self.cardinality):
                raise ValueError(f"width {w} not divisible by radix*cardinality")


def rsoftmax(attn_logits: torch.Tensor) -> torch.Tensor:
    """``[B, K, R, C_per]`` -> branch weights: softmax over R, or a sigmoid when R == 1."""
    if attn_logits.shape[2] > 1:
        return torch.softmax(attn_logits, dim=2)
    return torch.sigmoid(attn_logits)


class SplitAttentionConv(nn.Module):
    """R grouped-conv branches per cardinal group, mixed by radix-softmax channel weights."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, radix: int = 2, cardinality: int = 1, reduction: int = 4):
        super().__init__()
        if in_ch % (radix * cardinality) or out_ch % (radix * cardinality):
            raise ValueError(f"channels {in_ch}->{out_ch} not divisible by radix*cardinality={radix * cardinality}")
        self.radix, self.cardinality, self.out_ch = radix, cardinality, out_ch
        inter = max(out_ch * radix // reduction, 8)
        inter -= inter % cardinality
        self.conv = nn.Conv2d(in_ch, out_ch * radix, 3, stride, 1, groups=cardinality * radix, bias=False)
        self.bn0 = nn.BatchNorm2d(out_ch * radix)
        self.fc1 = nn.Conv2d(out_ch, inter, 1, groups=cardinality)
        self.bn1 = nn.BatchNorm2d(inter)
        self.fc2 = nn.Conv2d(inter, out_ch * radix, 1, groups=cardinality)

    def branches(self, x):
        y = F.relu(self.bn0(self.conv(x)))
        b, _, h, w = y.shape
        return y.reshape(b, self.radix, self.out_ch, h, w)

    def attention(self, splits):
        b = splits.shape[0]
        gap = splits.sum(dim=1).mean(dim=(2, 3), keepdim=True)
        logits = self.fc2(F.relu(self.bn1(self.fc1(gap))))
        k, r = self.cardinality, self.radix
        weights = rsoftmax(logits.reshape(b, k, r, self.out_ch // k))
        return weights.transpose(1, 2).reshape(b, r, self.out_ch, 1, 1)

    def forward(self, x):
        splits = self.branches(x)
        return (self.attention(splits) * splits).sum(dim=1)


class SplitAttentionBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, radix: int = 2, cardinality: int = 1, reduction: int = 4):
        super().__init__()
        self.attn = SplitAttentionConv(in_ch, out_ch, stride, radix, cardinality, reduction)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.shortcut = shortcut(in_ch, out_ch, stride)

    def forward(self, x):
        return split_attention_block(x, self)


def split_attention_block(x: torch.Tensor, block: SplitAttentionBlock) -> torch.Tensor:
    out = block.bn2(block.conv2(block.attn(x)))
    return F.relu(out + block.shortcut(x))


class ClassifierModel(nn.Module):
    """Stem -> residual stages -> global average pool -> ReLU FC stack -> C logits."""

    def __init__(self, in_channels: int, num_classes: int, config: SplitAttentionConfig, attention: bool = True):
        super().__init__()
        self.config = config
        self.attention = attention
        self.in_channels = in_channels
        widths = config.stage_widths
        self.stem = Stem(in_channels, widths[0])
        if attention:
            fn = lambda i, o, s: SplitAttentionBlock(i, o, s, config.radix, config.cardinality, config.reduction)
        else:
            fn = lambda i, o, s: BasicBlock(i, o, s)
        self.stages = make_stages(widths, config.blocks_per_stage, fn)
        dims = [widths[-1], *config.fc_hidden]
        fcs: list[nn.Module] = []
        for a, b in zip(dims[:-1], dims[1:]):
            fcs += [nn.Linear(a, b), nn.ReLU()]
        fcs.append(nn.Linear(dims[-1], num_classes))
        self.head = nn.Sequential(*fcs)

    def forward(self, x):
        return classifier_forward(x, self)


def classifier_forward(x: torch.Tensor, model: ClassifierModel) -> torch.Tensor:
    if x.shape[1] != model.in_channels:
        raise ValueError(f"classifier stem takes {model.in_channels} channels, got {x.shape[1]}")
    feats = model.stages(model.stem(x))
    return model.head(feats.mean(dim=(2, 3)))


def build_attention_variant(in_channels: int, num_classes: int, config: SplitAttentionConfig) -> ClassifierModel:
    return ClassifierModel(in_channels, num_classes, config, attention=True)


def build_plain_variant(in_channels: int, num_classes: int, config: SplitAttentionConfig) -> ClassifierModel:
    return ClassifierModel(in_channels, num_classes, config, attention=False)


def predict_probabilities(logits: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(logits)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
