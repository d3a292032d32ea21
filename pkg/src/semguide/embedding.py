"""CAM -> full-resolution semantic embedding.

The learnable route is five stride-2 transposed convolutions (each exactly
doubles the spatial side) with instance normalisation; the fixed route is
bilinear resizing, a sum over classes and per-sample min-max scaling.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

N_LAYERS = 5


@dataclass
class EmbeddingConfig:
    n_layers: int = N_LAYERS
    out_channels: int = 1
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    use_affine_norm: bool = True
    eps: float = 1e-5

    def __post_init__(self):
        if self.n_layers != N_LAYERS:
            raise ValueError(f"the embedding stack has exactly {N_LAYERS} layers")
        if self.out_channels < 1:
            raise ValueError("out_channels must be >= 1")
        # out = (in - 1) * stride - 2 * padding + kernel must equal 2 * in for every in
        if self.stride != 2 or self.kernel - 2 * self.padding != 2:
            raise ValueError("kernel/stride/padding must give exact x2 upsampling (e.g. 4/2/1)")

    @property
    def upscale(self) -> int:
        return self.stride**self.n_layers


def instance_normalize(
    x: torch.Tensor, eps: float = 1e-5, weight: torch.Tensor | None = None, bias: torch.Tensor | None = None
) -> torch.Tensor:
    """Per (sample, channel) spatial standardisation, then optional per-channel affine."""
    mu = x.mean(dim=(2, 3), keepdim=True)
    var = ((x - mu) ** 2).mean(dim=(2, 3), keepdim=True)
    out = (x - mu) / torch.sqrt(var + eps)
    if weight is not None:
        out = out * weight.reshape(1, -1, 1, 1)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out


class InstanceNorm(nn.Module):
    def __init__(self, channels: int, eps: float = 1e-5, affine: bool = True):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels)) if affine else None
        self.bias = nn.Parameter(torch.zeros(channels)) if affine else None

    def forward(self, x):
        return instance_normalize(x, self.eps, self.weight, self.bias)


class DeconvLayer(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, config: EmbeddingConfig, activate: bool):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(in_ch, out_ch, config.kernel, config.stride, config.padding)
        self.norm = InstanceNorm(out_ch, config.eps, config.use_affine_norm)
        self.activate = activate

    def forward(self, x):
        return deconv_layer_forward(x, self)


def deconv_layer_forward(x: torch.Tensor, layer: DeconvLayer) -> torch.Tensor:
    w = layer.deconv.weight  # [in, out, k, k]
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"layer expects {w.shape[0]} channels, got {x.shape[1]}")
    y = F.conv_transpose2d(x, w, layer.deconv.bias, layer.deconv.stride, layer.deconv.padding)
    y = layer.norm(y)
    return F.relu(y) if layer.activate else y


class SemanticEmbedding(nn.Module):
    """Layers 1-4 keep the class-channel count; layer 5 squeezes it to ``out_channels``."""

    def __init__(self, num_classes: int, config: EmbeddingConfig | None = None):
        super().__init__()
        self.config = config or EmbeddingConfig()
        self.num_classes = num_classes
        c, d = num_classes, self.config.out_channels
        self.layers = nn.ModuleList(
            [DeconvLayer(c, c, self.config, activate=True) for _ in range(N_LAYERS - 1)]
            + [DeconvLayer(c, d, self.config, activate=False)]
        )

    def forward(self, cam):
        return embed_cam(cam, self)


def embed_cam(cam: torch.Tensor, module: SemanticEmbedding) -> torch.Tensor:
    if cam.shape[1] != module.num_classes:
        raise ValueError(f"CAM has {cam.shape[1]} channels, embedding expects {module.num_classes}")
    x = cam
    for layer in module.layers:
        x = deconv_layer_forward(x, layer)
    return x


def manual_reshape_baseline(cam: torch.Tensor, target_side: int) -> torch.Tensor:
    """Bilinear resize to ``target_side``, sum over classes, min-max to [0, 1] per sample.

    A constant map has no range to normalise; it maps to zeros.
    """
    if target_side < cam.shape[-1]:
        raise ValueError("target side must not be smaller than the CAM side")
    up = F.interpolate(cam, size=(target_side, target_side), mode="bilinear", align_corners=False)
    summed = up.sum(dim=1, keepdim=True)
    flat = summed.flatten(1)
    lo = flat.min(dim=1).values.reshape(-1, 1, 1, 1)
    hi = flat.max(dim=1).values.reshape(-1, 1, 1, 1)
    span = hi - lo
    safe = torch.where(span > 0, span, torch.ones_like(span))
    return torch.where(span > 0, (summed - lo) / safe, torch.zeros_like(summed))


class ManualReshape(nn.Module):
    """Parameter-free stand-in for :class:`SemanticEmbedding`."""

    def __init__(self, upscale: int = 2**N_LAYERS):
        super().__init__()
        self.upscale = upscale

    def forward(self, cam):
        return manual_reshape_baseline(cam, cam.shape[-1] * self.upscale)


def concat_with_image(image: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
    if image.shape[-2:] != embedding.shape[-2:]:
        raise ValueError(f"spatial mismatch: image {tuple(image.shape[-2:])} vs embedding {tuple(embedding.shape[-2:])}")
    return torch.cat([image, embedding], dim=1)
