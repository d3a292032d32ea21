"""Per-label precision-recall evaluation and the comparison tables built on it."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tenarch
from .dataset import MAJORITY_THRESHOLD, LabelVocabulary


class UndefinedCurveError(ValueError):
    """A precision-recall curve needs at least one positive."""


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray
    label_name: str = ""
    n_pos: int = 0

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def precision_recall_curve(scores, labels, label_name: str = "") -> PRCurve:
    """One point per distinct score, thresholds descending; tied scores enter together."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape or scores.size == 0:
        raise ValueError("scores and labels must be nonempty and of equal length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedCurveError(f"label {label_name!r} has no positive samples")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp_at = tp[ends].astype(np.float64)
    predicted = (ends + 1).astype(np.float64)
    return PRCurve(tp_at / n_pos, tp_at / predicted, s[ends], label_name, n_pos)


def auc_pr(curve: PRCurve) -> float:
    """Average precision: step integration of precision over recall increments."""
    d_recall = np.diff(np.r_[0.0, curve.recall])
    return float(np.sum(d_recall * curve.precision))


def average_precision(scores, labels) -> float:
    return auc_pr(precision_recall_curve(scores, labels))


@dataclass
class LabelAUCReport:
    vocabulary: LabelVocabulary
    auc: dict[str, float | None]
    n_pos: dict[str, int]
    curves: dict[str, PRCurve] = field(default_factory=dict, repr=False)

    def present(self) -> list[str]:
        return [n for n in self.vocabulary.names if self.auc.get(n) is not None]

    def macro(self) -> float:
        vals = [self.auc[n] for n in self.present()]
        return float(np.mean(vals)) if vals else math.nan


def per_label_report(probabilities, targets, vocabulary: LabelVocabulary) -> LabelAUCReport:
    probs = np.asarray(probabilities, dtype=np.float64)
    tg = np.asarray(targets)
    if probs.shape != tg.shape or probs.ndim != 2 or probs.shape[1] != len(vocabulary):
        raise ValueError(f"shape mismatch: probabilities {probs.shape}, targets {tg.shape}, {len(vocabulary)} labels")
    auc: dict[str, float | None] = {}
    n_pos: dict[str, int] = {}
    curves: dict[str, PRCurve] = {}
    for j, name in enumerate(vocabulary.names):
        n_pos[name] = int((tg[:, j] > 0).sum())
        try:
            curve = precision_recall_curve(probs[:, j], tg[:, j], name)
        except UndefinedCurveError:
            warnings.warn(f"label {name!r} has no positives in this split; reported as absent")
            auc[name] = None
            continue
        curves[name] = curve
        auc[name] = auc_pr(curve)
    return LabelAUCReport(vocabulary, auc, n_pos, curves)


def relative_improvement(baseline_auc: float, candidate_auc: float) -> float:
    """Percent change over the baseline, rounded to two decimals."""
    if baseline_auc <= 0:
        raise ValueError("relative improvement needs a positive baseline")
    return round(100.0 * (candidate_auc - baseline_auc) / baseline_auc, 2)


@dataclass
class ComparisonReport:
    baseline: LabelAUCReport
    candidate: LabelAUCReport
    improvement: dict[str, float | None]
    baseline_name: str = "baseline"
    candidate_name: str = "candidate"


def compare(baseline: LabelAUCReport, candidate: LabelAUCReport, baseline_name="baseline", candidate_name="candidate") -> ComparisonReport:
    if baseline.vocabulary.names != candidate.vocabulary.names:
        raise ValueError("reports use different vocabularies")
    imp: dict[str, float | None] = {}
    for name in baseline.vocabulary.names:
        b, c = baseline.auc.get(name), candidate.auc.get(name)
        imp[name] = relative_improvement(b, c) if b and c is not None else None
    return ComparisonReport(baseline, candidate, imp, baseline_name, candidate_name)


def majority_minority_aggregate(
    report: ComparisonReport, shares: Mapping[str, float], threshold: float = MAJORITY_THRESHOLD
) -> dict[str, float | None]:
    """Unweighted mean improvement over labels with share > threshold, and over the rest."""
    names = report.baseline.vocabulary.names
    missing = [n for n in names if n not in shares]
    if missing:
        raise ValueError(f"no sample share for {missing}")
    groups: dict[str, list[float]] = {"majority_avg": [], "minority_avg": []}
    for n in names:
        v = report.improvement.get(n)
        if v is None:
            continue
        groups["majority_avg" if shares[n] > threshold else "minority_avg"].append(v)
    out: dict[str, float | None] = {}
    for key, vals in groups.items():
        if not vals:
            warnings.warn(f"{key.split('_')[0]} group is empty")
            out[key] = None
        else:
            out[key] = round(float(np.mean(vals)), 2)
    return out


# -- emission -------------------------------------------------------------------

def render_pr_plot(curves: Sequence[PRCurve] | Mapping[str, PRCurve], out_path: str | Path, names: Sequence[str] | None = None) -> list[str]:
    """Draw every curve on one axes; returns the legend strings ("name (AUC=0.123)").

    ``curves`` may map approach name -> curve (several approaches for one label)
    or be a plain sequence (legend falls back to each curve's label name).
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if isinstance(curves, Mapping):
        names, curves = list(curves.keys()), list(curves.values())
    curves = list(curves)
    if not curves:
        raise ValueError("no curves to plot")
    names = list(names) if names is not None else [c.label_name for c in curves]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    legend = []
    for name, c in zip(names, curves):
        text = f"{name} (AUC={auc_pr(c):.3f})"
        ax.step(np.r_[0.0, c.recall], np.r_[c.precision[0], c.precision], where="pre", label=text)
        legend.append(text)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower left", fontsize=7)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return legend


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def render_comparison_table(report: ComparisonReport, out_path: str | Path) -> tuple[Path, Path]:
    """Write ``<out>.csv`` and ``<out>.md``: baseline row, candidate row, improvement row."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    names = list(report.baseline.vocabulary.names)
    rows = [
        [report.baseline_name, *(_fmt(report.baseline.auc[n]) for n in names)],
        [report.candidate_name, *(_fmt(report.candidate.auc[n]) for n in names)],
        ["relative_improvement_pct", *("" if report.improvement[n] is None else f"{report.improvement[n]:.2f}" for n in names)],
    ]
    csv_path, md_path = out_path.with_suffix(".csv"), out_path.with_suffix(".md")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", *names])
        w.writerows(rows)
    lines = ["| | " + " | ".join(names) + " |", "|---" * (len(names) + 1) + "|"]
    for i, r in enumerate(rows):
        cells = [c if (i == 2 or c == "") else f"{float(c):.3f}" for c in r[1:]]
        if i == 2:
            cells = [c + "%" if c else "n/a" for c in cells]
        lines.append(f"| {r[0]} | " + " | ".join(c or "n/a" for c in cells) + " |")
    md_path.write_text("\n".join(lines) + "\n")
    return csv_path, md_path


def read_comparison_csv(path: str | Path) -> dict[str, dict[str, float | None]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    return {r[0]: {n: (float(v) if v else None) for n, v in zip(names, r[1:])} for r in rows[1:]}


def save_predictions(
    path: str | Path, probabilities, targets, ids: Sequence[str], manifest_ref: str = "", extra: Mapping | None = None
) -> None:
    meta = {"ids": list(ids), "manifest": manifest_ref, **(extra or {})}
    tenarch.save(
        path,
        {
            "probabilities": np.asarray(probabilities, dtype=np.float32),
            "targets": np.asarray(targets, dtype=np.float32),
            "__meta__": tenarch.pack_json(meta),
        },
    )


def load_predictions(path: str | Path) -> tuple[np.ndarray, np.ndarray, dict]:
    arrays = tenarch.load(path)
    return arrays["probabilities"], arrays["targets"], tenarch.unpack_json(arrays["__meta__"])
