"""Two-stage experiment runs: CAM training, classifier training, evaluation, ablations."""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbone import BackboneConfig
from .cam import CAMModel, build_cam_model, compute_cams, train_cam_model
from .classifier import SplitAttentionConfig
from .config import ExperimentConfig
from .dataset import DatasetManifest, LabelVocabulary, label_distribution, load_split
from .embedding import EmbeddingConfig
from .evaluation import LabelAUCReport, compare, majority_minority_aggregate, per_label_report
from .pipeline import VARIANTS, SemanticPipeline, variant_uses_cam
from .training import (
    CheckpointConfigError,
    CheckpointRecord,
    FitResult,
    TensorData,
    TrainConfig,
    checkpoint_from_fit,
    fit,
    predict_logits,
    seeded,
    state_from_numpy,
)

log = logging.getLogger(__name__)


@dataclass
class SplitTensors:
    ids: list[str]
    images: torch.Tensor
    targets: torch.Tensor

    @classmethod
    def load(cls, manifest: DatasetManifest, split: str) -> "SplitTensors":
        ids, images, targets = load_split(manifest, split)
        return cls(ids, images, targets)


# -- checkpoints ----------------------------------------------------------------

def cam_record(model: CAMModel, result: FitResult, cfg: ExperimentConfig, vocab: LabelVocabulary) -> CheckpointRecord:
    meta = {
        "kind": "cam",
        "num_classes": len(vocab),
        "vocabulary": list(vocab.names),
        "backbone": dataclasses.asdict(cfg.cam.backbone),
        "train": dataclasses.asdict(cfg.cam.train),
    }
    return checkpoint_from_fit(model, result, meta)


def classifier_record(model: SemanticPipeline, result: FitResult, cfg: ExperimentConfig, vocab: LabelVocabulary) -> CheckpointRecord:
    # the frozen CAM model rides along so the checkpoint is self-contained
    meta = {
        "kind": "classifier",
        "variant": model.variant,
        "num_classes": len(vocab),
        "vocabulary": list(vocab.names),
        "split_attention": dataclasses.asdict(cfg.classifier.split_attention),
        "embedding": dataclasses.asdict(cfg.embedding),
        "backbone": dataclasses.asdict(cfg.cam.backbone) if model.cam_model is not None else None,
        "train": dataclasses.asdict(cfg.classifier.train),
    }
    return checkpoint_from_fit(model, result, meta)


def cam_from_record(rec: CheckpointRecord) -> CAMModel:
    if rec.config.get("kind") != "cam":
        raise CheckpointConfigError(f"expected a CAM checkpoint, got kind {rec.config.get('kind')!r}")
    model = CAMModel(BackboneConfig(**rec.config["backbone"]), rec.config["num_classes"])
    model.load_state_dict(state_from_numpy(rec.parameters))
    return model.eval()


def model_from_record(rec: CheckpointRecord) -> torch.nn.Module:
    """Rebuild whichever model a checkpoint holds, in eval mode."""
    kind = rec.config.get("kind")
    if kind == "cam":
        return cam_from_record(rec)
    if kind != "classifier":
        raise CheckpointConfigError(f"unknown checkpoint kind {kind!r}")
    c = rec.config
    cam = CAMModel(BackboneConfig(**c["backbone"]), c["num_classes"]) if c.get("backbone") else None
    model = SemanticPipeline(
        c["variant"], c["num_classes"], SplitAttentionConfig(**c["split_attention"]), EmbeddingConfig(**c["embedding"]), cam
    )
    model.load_state_dict(state_from_numpy(rec.parameters))
    return model.eval()


def check_vocabulary(rec: CheckpointRecord, vocab: LabelVocabulary) -> None:
    if rec.config.get("vocabulary") != list(vocab.names):
        raise CheckpointConfigError("checkpoint vocabulary does not match the dataset")


# -- stages ---------------------------------------------------------------------

def train_cam_stage(
    cfg: ExperimentConfig, manifest: DatasetManifest, train: SplitTensors | None = None, resume: CheckpointRecord | None = None
) -> tuple[CAMModel, FitResult]:
    train = train or SplitTensors.load(manifest, "train")
    return train_cam_model(manifest, cfg.cam.backbone, cfg.cam.train, data=(train.images, train.targets), resume=resume)


def build_variant(cfg: ExperimentConfig, variant: str, num_classes: int, cam_model: CAMModel | None) -> SemanticPipeline:
    with seeded(cfg.classifier.train.seed):
        return SemanticPipeline(variant, num_classes, cfg.classifier.split_attention, cfg.embedding, cam_model)


def _inputs(model: SemanticPipeline, images: torch.Tensor, cams: torch.Tensor | None) -> tuple[torch.Tensor, ...]:
    if not variant_uses_cam(model.variant):
        return (images,)
    if cams is None:
        cams = compute_cams(model.cam_model, images)
    return (images, cams)


def train_classifier_stage(
    cfg: ExperimentConfig,
    variant: str,
    train: SplitTensors,
    cam_model: CAMModel | None,
    train_cams: torch.Tensor | None = None,
) -> tuple[SemanticPipeline, FitResult]:
    """Train one variant; CAMs come from the frozen CAM model (precomputed once)."""
    if variant_uses_cam(variant) and cam_model is None:
        raise ValueError(f"variant {variant} needs a CAM model")
    model = build_variant(cfg, variant, train.targets.shape[1], cam_model if variant_uses_cam(variant) else None)
    data = TensorData(_inputs(model, train.images, train_cams), train.targets)
    result = fit(model, data, cfg.classifier.train)
    model.load_state_dict(result.best_state)
    return model.eval(), result


@torch.no_grad()
def predict_probabilities(model: torch.nn.Module, images: torch.Tensor, cams: torch.Tensor | None = None) -> np.ndarray:
    if isinstance(model, SemanticPipeline):
        inputs = _inputs(model, images, cams)
    else:
        inputs = (images,)
    return torch.sigmoid(predict_logits(model, inputs)).numpy()


def evaluate_model(model, test: SplitTensors, vocab: LabelVocabulary, cams: torch.Tensor | None = None) -> tuple[np.ndarray, LabelAUCReport]:
    if len(test.ids) == 0:
        raise ValueError("test split is empty")
    probs = predict_probabilities(model, test.images, cams)
    return probs, per_label_report(probs, test.targets.numpy(), vocab)


# -- ablation -------------------------------------------------------------------

def train_shares(manifest: DatasetManifest) -> dict[str, float]:
    dist = label_distribution(manifest, split="train")
    return {n: float(dist.shares[i]) for i, n in enumerate(manifest.vocabulary.names)}


def run_seed(
    cfg: ExperimentConfig,
    manifest: DatasetManifest,
    seed: int,
    variants=VARIANTS,
    train: SplitTensors | None = None,
    test: SplitTensors | None = None,
) -> dict:
    """One CAM model and every requested variant under one seed.

    Returns ``{"cam": FitResult, "reports": {variant: LabelAUCReport},
    "histories": {variant: history}, "probabilities": {variant: array}}``.
    """
    cfg = cfg.with_seed(seed)
    vocab = manifest.vocabulary
    train = train or SplitTensors.load(manifest, "train")
    test = test or SplitTensors.load(manifest, "test")
    cam_model, cam_result, train_cams, test_cams = None, None, None, None
    if any(variant_uses_cam(v) for v in variants):
        cam_model, cam_result = train_cam_stage(cfg, manifest, train)
        train_cams, test_cams = compute_cams(cam_model, train.images), compute_cams(cam_model, test.images)
    out = {"cam": cam_result, "reports": {}, "histories": {}, "probabilities": {}}
    for v in variants:
        uses = variant_uses_cam(v)
        model, res = train_classifier_stage(cfg, v, train, cam_model if uses else None, train_cams if uses else None)
        probs, report = evaluate_model(model, test, vocab, test_cams if uses else None)
        log.info("seed %d %s macro %.4f", seed, v, report.macro())
        out["reports"][v] = report
        out["histories"][v] = res.history
        out["probabilities"][v] = probs
    return out


def ablation_rows(reports: dict[str, LabelAUCReport], names) -> dict[str, dict[str, float | None]]:
    rows = {}
    for v, rep in reports.items():
        rows[v] = {n: rep.auc[n] for n in names}
        rows[v]["macro"] = rep.macro()
    return rows


def delta_rows(rows: dict, reference: str = "semantic_deconv_d1") -> dict:
    ref = rows[reference]
    return {
        v: {k: (None if r[k] is None or ref[k] is None else r[k] - ref[k]) for k in r}
        for v, r in rows.items()
    }


def group_improvement(
    rows: dict, shares: dict[str, float], vocab: LabelVocabulary,
    baseline: str = "rgb_baseline", candidate: str = "semantic_deconv_d1",
) -> dict[str, float | None]:
    """Majority and minority mean relative improvement of one ablation row over another."""
    def report(v):
        return LabelAUCReport(vocab, {n: rows[v][n] for n in vocab.names}, {})

    return majority_minority_aggregate(compare(report(baseline), report(candidate)), shares)


def mean_rows(per_seed: list[dict]) -> dict:
    out = {}
    for v in per_seed[0]:
        out[v] = {}
        for k in per_seed[0][v]:
            vals = [rows[v][k] for rows in per_seed if rows[v][k] is not None]
            out[v][k] = float(np.mean(vals)) if vals else None
    return out


def write_rows_csv(rows: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(next(iter(rows.values())).keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", *cols])
        for v, r in rows.items():
            w.writerow([v, *("" if r[c] is None else repr(float(r[c])) for c in cols)])


def read_rows_csv(path: str | Path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    return {r[0]: {c: (float(x) if x else None) for c, x in zip(cols, r[1:])} for r in rows[1:]}


def rows_markdown(rows: dict, signed: bool = False) -> str:
    cols = list(next(iter(rows.values())).keys())
    fmt = (lambda x: f"{x:+.3f}") if signed else (lambda x: f"{x:.3f}")
    lines = ["| variant | " + " | ".join(cols) + " |", "|---" * (len(cols) + 1) + "|"]
    for v, r in rows.items():
        lines.append(f"| {v} | " + " | ".join("n/a" if r[c] is None else fmt(r[c]) for c in cols) + " |")
    return "\n".join(lines)
