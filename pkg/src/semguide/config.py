"""Experiment configuration: one JSON document with five sections plus the variant."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .classifier import SplitAttentionConfig
from .dataset import SceneConfig
from .embedding import EmbeddingConfig
from .pipeline import VARIANTS
from .training import TrainConfig

CONFIG_ENV = "SEMGUIDE_CONFIG"
PRESETS = ("fast", "full")


@dataclass
class CamSection:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class ClassifierSection:
    split_attention: SplitAttentionConfig = field(default_factory=SplitAttentionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class EvaluationSection:
    out_dir: str = "runs"
    plots: bool = True
    n_samples: int = 5000
    train_fraction: float = 0.7
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        self.seeds = [int(s) for s in self.seeds]


@dataclass
class ExperimentConfig:
    dataset: SceneConfig = field(default_factory=SceneConfig)
    cam: CamSection = field(default_factory=CamSection)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    variant: str = "semantic_deconv_d1"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config sections: {sorted(extra)}")
        cam = d.get("cam", {})
        clf = d.get("classifier", {})
        return cls(
            dataset=SceneConfig.from_dict(d["dataset"]) if "dataset" in d else SceneConfig(),
            cam=CamSection(BackboneConfig(**cam.get("backbone", {})), TrainConfig(**cam.get("train", {}))),
            embedding=EmbeddingConfig(**d.get("embedding", {})),
            classifier=ClassifierSection(SplitAttentionConfig(**clf.get("split_attention", {})), TrainConfig(**clf.get("train", {}))),
            evaluation=EvaluationSection(**d.get("evaluation", {})),
            variant=d.get("variant", "semantic_deconv_d1"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy whose CAM and classifier training both use ``seed``."""
        out = ExperimentConfig.from_dict(self.to_dict())
        out.cam.train.seed = seed
        out.classifier.train.seed = seed
        return out


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def preset(name: str) -> ExperimentConfig:
    """``full``: 256 px images and the default widths.

    ``fast``: 128 px (a 4x4 CAM grid), halved widths, one block per stage and
    short epoch budgets, so three ablation seeds fit in one CPU core-hour.
    """
    if name == "full":
        return ExperimentConfig()
    if name != "fast":
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    widths, blocks = [16, 32, 64, 128], [1, 1, 1, 1]
    return ExperimentConfig(
        dataset=SceneConfig(image_size=128),
        cam=CamSection(BackboneConfig(widths, blocks), TrainConfig(initial_lr=1e-3, max_epochs=8, batch_size=32)),
        classifier=ClassifierSection(
            SplitAttentionConfig(stage_widths=widths, blocks_per_stage=blocks, fc_hidden=[256, 128]),
            TrainConfig(initial_lr=1e-3, max_epochs=10, batch_size=32),
        ),
        evaluation=EvaluationSection(n_samples=3000),
    )


def load_config(path: str | os.PathLike | None = None, preset_name: str | None = None) -> ExperimentConfig:
    """Resolve a config: explicit path, then ``$SEMGUIDE_CONFIG``, then the preset (default ``full``)."""
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        return ExperimentConfig.from_json(Path(path).read_text())
    return preset(preset_name or "full")


def save_config(config: ExperimentConfig, path: str | os.PathLike) -> None:
    Path(path).write_text(config.to_json() + "\n")
