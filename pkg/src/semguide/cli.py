"""``semguide`` command line: generate-data, train-cam, train-classifier, evaluate, ablate, report."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import re
import sys
import warnings
from pathlib import Path

import numpy as np

from . import tenarch
from .config import PRESETS, ExperimentConfig, load_config, save_config
from .dataset import (
    DatasetManifest,
    MAJORITY_THRESHOLD,
    SceneConfig,
    LabelVocabulary,
    build_vocabulary,
    generate_dataset,
    read_manifest,
    split_dataset,
    write_manifest,
)
from .evaluation import (
    compare,
    load_predictions,
    majority_minority_aggregate,
    per_label_report,
    render_pr_plot,
    save_predictions,
)
from .experiment import (
    SplitTensors,
    ablation_rows,
    cam_from_record,
    cam_record,
    check_vocabulary,
    classifier_record,
    delta_rows,
    evaluate_model,
    group_improvement,
    mean_rows,
    model_from_record,
    rows_markdown,
    run_seed,
    train_cam_stage,
    train_classifier_stage,
    train_shares,
    write_rows_csv,
)
from .pipeline import VARIANTS, variant_uses_cam
from .training import load_checkpoint, save_checkpoint, write_history_csv

log = logging.getLogger("semguide")

MANIFEST, HEADER, HISTORY, CHECKPOINT, PREDICTIONS = "manifest.jsonl", "dataset.json", "history.csv", "checkpoint.ten", "predictions.ten"
REPORT, TABLE = "report.md", "table.csv"


class UsageError(Exception):
    """Bad flag combination that argparse cannot catch on its own."""


def plot_name(label: str) -> str:
    return "pr_" + re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_") + ".svg"


def dataset_hash(data_dir: str | Path) -> str:
    """SHA-256 over the manifest, header and every image, in manifest order."""
    data_dir = Path(data_dir)
    h = hashlib.sha256()
    for name in (HEADER, MANIFEST):
        h.update((data_dir / name).read_bytes())
    for rec in read_manifest(data_dir).records:
        h.update((data_dir / rec.image_path).read_bytes())
    return h.hexdigest()


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.preset)
    if getattr(args, "variant", None):
        cfg.variant = args.variant
    if getattr(args, "seed", None) is not None and not isinstance(args.seed, list):
        cfg = cfg.with_seed(args.seed)
    return cfg


def _data(path) -> DatasetManifest:
    if not Path(path).is_dir():
        raise FileNotFoundError(f"data directory {path} does not exist")
    return read_manifest(path)


# -- commands -------------------------------------------------------------------

def cmd_generate_data(args) -> int:
    cfg = load_config(args.config, args.preset)
    scene = cfg.dataset if args.seed is None else SceneConfig.from_dict({**cfg.dataset.to_dict(), "seed": args.seed})
    n = args.n or cfg.evaluation.n_samples
    manifest = generate_dataset(scene, n, args.out)
    manifest = split_dataset(manifest, cfg.evaluation.train_fraction)
    write_manifest(manifest)
    print(f"{n} samples -> {args.out} (sha256 {dataset_hash(args.out)[:16]})")
    return 0


def cmd_train_cam(args) -> int:
    cfg = _config(args)
    manifest = _data(args.data)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume, num_classes=len(manifest.vocabulary))
        check_vocabulary(resume, manifest.vocabulary)
    model, result = train_cam_stage(cfg, manifest, resume=resume)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / CHECKPOINT, cam_record(model, result, cfg, manifest.vocabulary))
    write_history_csv(result.history, out / HISTORY)
    print(f"CAM model: best epoch {result.best_epoch}, val loss {result.best_val_loss:.4f} -> {out / CHECKPOINT}")
    return 0


def cmd_train_classifier(args) -> int:
    cfg = _config(args)
    variant = cfg.variant
    manifest = _data(args.data)
    cam_model = None
    if variant_uses_cam(variant):
        if not args.cam_checkpoint:
            raise UsageError(f"--cam-checkpoint is required for variant {variant}")
        rec = load_checkpoint(args.cam_checkpoint, num_classes=len(manifest.vocabulary))
        check_vocabulary(rec, manifest.vocabulary)
        cam_model = cam_from_record(rec)
    elif args.cam_checkpoint:
        warnings.warn("rgb_baseline uses no CAM; ignoring --cam-checkpoint")
    train = SplitTensors.load(manifest, "train")
    model, result = train_classifier_stage(cfg, variant, train, cam_model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / CHECKPOINT, classifier_record(model, result, cfg, manifest.vocabulary))
    write_history_csv(result.history, out / HISTORY)
    print(f"{variant}: best epoch {result.best_epoch}, val loss {result.best_val_loss:.4f} -> {out / CHECKPOINT}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.preset)
    manifest = _data(args.data)
    vocab = manifest.vocabulary
    rec = load_checkpoint(args.checkpoint, num_classes=len(vocab))
    check_vocabulary(rec, vocab)
    model = model_from_record(rec)
    test = SplitTensors.load(manifest, "test")
    probs, report = evaluate_model(model, test, vocab)
    name = rec.config.get("variant", "cam_model")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_predictions(
        out / PREDICTIONS, probs, test.targets.numpy(), test.ids, str(Path(args.data).resolve()),
        extra={"vocabulary": list(vocab.names), "name": name},
    )
    with open(out / TABLE, "w") as fh:
        fh.write("label,auc,n_pos\n")
        for n in vocab.names:
            auc = report.auc[n]
            fh.write(f"{n},{'' if auc is None else repr(auc)},{report.n_pos[n]}\n")
    lines = [f"# {name}", "", "| label | PR-AUC | positives |", "|---|---|---|"]
    lines += [f"| {n} | {'n/a' if report.auc[n] is None else f'{report.auc[n]:.3f}'} | {report.n_pos[n]} |" for n in vocab.names]
    lines += ["", f"macro PR-AUC over present labels: {report.macro():.4f}"]
    (out / REPORT).write_text("\n".join(lines) + "\n")
    if cfg.evaluation.plots:
        for n, curve in report.curves.items():
            render_pr_plot({name: curve}, out / plot_name(n))
    print(f"{name}: macro PR-AUC {report.macro():.4f} -> {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.preset)
    manifest = _data(args.data)
    names = list(manifest.vocabulary.names)
    seeds = args.seed if args.seed else cfg.evaluation.seeds
    variants = args.variant or list(VARIANTS)
    if "semantic_deconv_d1" not in variants:
        raise UsageError("the ablation table is relative to semantic_deconv_d1; include it")
    out = Path(args.out)
    train, test = SplitTensors.load(manifest, "train"), SplitTensors.load(manifest, "test")
    shares = train_shares(manifest)
    per_seed = []
    for seed in seeds:
        res = run_seed(cfg, manifest, seed, variants, train, test)
        rows = ablation_rows(res["reports"], names)
        per_seed.append(rows)
        sdir = out / f"seed_{seed}"
        write_rows_csv(rows, sdir / TABLE)
        write_rows_csv(delta_rows(rows), sdir / "deltas.csv")
        for v, hist in res["histories"].items():
            write_history_csv(hist, sdir / v / HISTORY)
        if res["cam"] is not None:
            write_history_csv(res["cam"].history, sdir / "cam" / HISTORY)
        (sdir / REPORT).write_text(_ablation_markdown(f"seed {seed}", rows, shares, manifest.vocabulary))
    mean = mean_rows(per_seed)
    write_rows_csv(mean, out / TABLE)
    write_rows_csv(delta_rows(mean), out / "deltas.csv")
    (out / REPORT).write_text(_ablation_markdown(f"mean over seeds {list(seeds)}", mean, shares, manifest.vocabulary))
    print(rows_markdown(mean))
    return 0


def _ablation_markdown(title: str, rows: dict, shares: dict, vocab: LabelVocabulary) -> str:
    text = (
        f"# Ablation, {title}\n\n## PR-AUC\n\n{rows_markdown(rows)}\n\n"
        f"## Difference from semantic_deconv_d1\n\n{rows_markdown(delta_rows(rows), signed=True)}\n"
    )
    if "rgb_baseline" in rows:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            agg = group_improvement(rows, shares, vocab)
        fmt = lambda x: "n/a" if x is None else f"{x:.2f}%"
        text += (
            "\n## semantic_deconv_d1 over rgb_baseline\n\n"
            f"majority mean {fmt(agg['majority_avg'])}, minority mean {fmt(agg['minority_avg'])}\n"
        )
    return text


def cmd_report(args) -> int:
    dirs = [Path(d) for d in args.inputs]
    if len(dirs) < 2:
        raise UsageError("report needs a baseline directory and at least one candidate")
    loaded = []
    for d in dirs:
        probs, targets, meta = load_predictions(d / PREDICTIONS)
        loaded.append((d, probs, targets, meta))
    vocab_names = loaded[0][3].get("vocabulary")
    for d, _, _, meta in loaded[1:]:
        if meta.get("vocabulary") != vocab_names:
            raise ValueError(f"vocabulary of {d} differs from {dirs[0]}")
    vocab = LabelVocabulary(vocab_names) if vocab_names else build_vocabulary()
    reports = [(meta.get("name", d.name), per_label_report(p, t, vocab)) for d, p, t, meta in loaded]
    shares = train_shares(read_manifest(loaded[0][3]["manifest"]))
    majority = [n for n in vocab.names if shares[n] > MAJORITY_THRESHOLD]
    base_name, base = reports[0]
    lines = ["# Comparison report", ""]
    lines += [f"Baseline: {base_name} ({dirs[0]})", ""]
    lines += [f"Majority labels (train share > {MAJORITY_THRESHOLD:.0%}): {', '.join(majority) or 'none'}", ""]
    for (cand_name, cand), d in zip(reports[1:], dirs[1:]):
        cmp_ = compare(base, cand, base_name, cand_name)
        agg = majority_minority_aggregate(cmp_, shares)
        lines += [f"## {cand_name} vs {base_name}", ""]
        lines += ["| label | " + base_name + " | " + cand_name + " | relative improvement % |", "|---|---|---|---|"]
        for n in vocab.names:
            b, c, imp = base.auc[n], cand.auc[n], cmp_.improvement[n]
            f3 = lambda x: "n/a" if x is None else f"{x:.3f}"
            lines.append(f"| {n} | {f3(b)} | {f3(c)} | {'n/a' if imp is None else f'{imp:.2f}'} |")
        present = [v for v in cmp_.improvement.values() if v is not None]
        mean_all = round(float(np.mean(present)), 2) if present else None
        lines += [
            "",
            f"- macro PR-AUC: {base.macro():.4f} -> {cand.macro():.4f}",
            f"- mean relative improvement, all labels: {mean_all}%",
            f"- majority mean: {agg['majority_avg']}%",
            f"- minority mean: {agg['minority_avg']}%",
            "",
        ]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines))
    print(f"report -> {out}")
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semguide", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="experiment JSON (default: $SEMGUIDE_CONFIG, then the preset)")
        p.add_argument("--preset", choices=PRESETS, default=None, help="built-in config when no file is given (default full)")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override the dataset or training seed")

    p = sub.add_parser("generate-data", help="render the synthetic dataset and split it")
    common(p)
    p.add_argument("--n", type=int, default=None, help="number of samples (default from config)")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train-cam", help="train the CAM model")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory for history and checkpoint")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train_cam)

    p = sub.add_parser("train-classifier", help="train one classifier variant")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory for history and checkpoint")
    p.add_argument("--cam-checkpoint", help="trained CAM model; required by every variant but rgb_baseline")
    p.add_argument("--variant", choices=VARIANTS, help="default from config")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    common(p, seed=False)
    p.add_argument("--checkpoint", required=True, help="CAM or classifier checkpoint")
    p.add_argument("--data", required=True, help="dataset directory; its test split is scored")
    p.add_argument("--out", required=True, help="directory for table, plots and predictions")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train every variant for each seed and tabulate")
    common(p, seed=False)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="directory for per-seed and mean tables")
    p.add_argument("--seed", type=int, action="append", help="repeatable; default from config")
    p.add_argument("--variant", choices=VARIANTS, action="append", help="repeatable; default all five")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="merge evaluation directories into one comparison report")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="baseline dir first, then candidates")
    p.add_argument("--out", required=True, help="Markdown report path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"semguide: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError, tenarch.ArchiveFormatError) as e:
        print(f"semguide: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
