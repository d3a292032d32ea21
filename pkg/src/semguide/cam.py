"""Class-activation-map generator: SGE residual backbone plus a per-class 1x1 head."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import tenarch
from .backbone import BackboneConfig, ResNetBackbone
from .dataset import DatasetManifest, load_split
from .training import FitResult, TrainConfig, TensorData, fit, seeded

log = logging.getLogger(__name__)


def cam_head_forward(features: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """1x1 convolution F -> C with no activation; the result is the CAM."""
    return F.conv2d(features, weight.reshape(weight.shape[0], weight.shape[1], 1, 1), bias)


def logits_from_cam(cam: torch.Tensor) -> torch.Tensor:
    return cam.mean(dim=(2, 3))


class CAMModel(nn.Module):
    def __init__(self, config: BackboneConfig, num_classes: int = 11):
        super().__init__()
        self.config = config
        self.num_classes = num_classes
        self.backbone = ResNetBackbone(config, use_sge=True)
        self.head = nn.Conv2d(config.feature_channels, num_classes, 1)

    def cam(self, images: torch.Tensor) -> torch.Tensor:
        return cam_head_forward(self.backbone(images), self.head.weight, self.head.bias)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return logits_from_cam(self.cam(images))


def build_cam_model(config: BackboneConfig, num_classes: int, seed: int) -> CAMModel:
    with seeded(seed):
        return CAMModel(config, num_classes)


def train_cam_model(
    manifest: DatasetManifest,
    config: BackboneConfig,
    train_config: TrainConfig,
    data: tuple[torch.Tensor, torch.Tensor] | None = None,
    resume=None,
) -> tuple[CAMModel, FitResult]:
    """Fit the CAM model on the manifest's train split; returns the best-by-validation model."""
    if data is None:
        _, images, targets = load_split(manifest, "train")
    else:
        images, targets = data
    if len(images) == 0:
        raise ValueError("empty training data")
    model = build_cam_model(config, targets.shape[1], train_config.seed)
    result = fit(model, TensorData((images,), targets), train_config, resume=resume)
    model.load_state_dict(result.best_state)
    model.eval()
    return model, result


@torch.no_grad()
def compute_cams(model: CAMModel, images: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    model.eval()
    out = [model.cam(images[i : i + batch_size]) for i in range(0, len(images), batch_size)]
    return torch.cat(out) if out else torch.empty(0)


def export_cams(model: CAMModel, manifest: DatasetManifest, out_path: str | Path, images: torch.Tensor | None = None) -> int:
    """Write one ``[C, h', w']`` f32 record per sample id; returns the record count."""
    ids = manifest.ids()
    if images is None:
        from .dataset import load_batch

        images, _ = load_batch(manifest, ids)
    cams = compute_cams(model, images).numpy().astype(np.float32)
    tenarch.save(out_path, {i: c for i, c in zip(ids, cams)})
    return len(ids)


def load_cams(path: str | Path, ids: list[str]) -> torch.Tensor:
    arrays = tenarch.load(path)
    missing = [i for i in ids if i not in arrays]
    if missing:
        raise KeyError(f"CAM archive lacks ids {missing[:5]}")
    return torch.from_numpy(np.stack([arrays[i] for i in ids]))
