"""Experiment variants: how the CAM, embedding and classifier are wired together."""
from __future__ import annotations

import torch
import torch.nn as nn

from .cam import CAMModel
from .classifier import SplitAttentionConfig, build_attention_variant, build_plain_variant
from .embedding import EmbeddingConfig, ManualReshape, SemanticEmbedding, concat_with_image

VARIANTS = ("rgb_baseline", "semantic_deconv_d1", "manual_reshape", "plain_backbone", "semantic_deconv_d3")


def variant_uses_cam(variant: str) -> bool:
    return variant != "rgb_baseline"


class SemanticPipeline(nn.Module):
    """``forward(images, cams=None)``.

    ``cams`` may be precomputed by the frozen CAM model; when omitted and the
    variant needs them, the attached CAM model computes them without gradients.
    """

    def __init__(
        self,
        variant: str,
        num_classes: int,
        classifier_config: SplitAttentionConfig,
        embedding_config: EmbeddingConfig | None = None,
        cam_model: CAMModel | None = None,
    ):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        self.variant = variant
        self.num_classes = num_classes
        emb_cfg = embedding_config or EmbeddingConfig()
        if variant == "semantic_deconv_d3":
            emb_cfg = EmbeddingConfig(**{**emb_cfg.__dict__, "out_channels": 3})
        elif variant in ("semantic_deconv_d1", "plain_backbone"):
            emb_cfg = EmbeddingConfig(**{**emb_cfg.__dict__, "out_channels": 1})
        self.embedding_config = emb_cfg

        if variant == "rgb_baseline":
            self.embedding = None
            extra = 0
        elif variant == "manual_reshape":
            self.embedding = ManualReshape()
            extra = 1
        else:
            self.embedding = SemanticEmbedding(num_classes, emb_cfg)
            extra = emb_cfg.out_channels
        build = build_plain_variant if variant == "plain_backbone" else build_attention_variant
        self.classifier = build(3 + extra, num_classes, classifier_config)
        self.cam_model = None
        if cam_model is not None and variant_uses_cam(variant):
            self.attach_cam_model(cam_model)

    def attach_cam_model(self, cam_model: CAMModel) -> None:
        for p in cam_model.parameters():
            p.requires_grad_(False)
        self.cam_model = cam_model.eval()

    def train(self, mode: bool = True):
        super().train(mode)
        if self.cam_model is not None:
            self.cam_model.eval()
        return self

    def forward(self, images: torch.Tensor, cams: torch.Tensor | None = None) -> torch.Tensor:
        if self.embedding is None:
            return self.classifier(images)
        if cams is None:
            if self.cam_model is None:
                raise ValueError(f"variant {self.variant} needs CAMs or an attached CAM model")
            with torch.no_grad():
                cams = self.cam_model.cam(images)
        return self.classifier(concat_with_image(images, self.embedding(cams)))

    def trainable_embedding_parameters(self) -> int:
        if self.embedding is None:
            return 0
        return sum(p.numel() for p in self.embedding.parameters() if p.requires_grad)
