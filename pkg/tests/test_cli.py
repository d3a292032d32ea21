import csv
import json
import warnings

import pytest

from semguide import tenarch
from semguide.backbone import BackboneConfig
from semguide.classifier import SplitAttentionConfig
from semguide.cli import dataset_hash, main, plot_name
from semguide.config import preset, save_config
from semguide.dataset import SceneConfig
from semguide.experiment import read_rows_csv
from semguide.pipeline import VARIANTS
from semguide.training import TrainConfig, load_checkpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = preset("fast")
    cfg.dataset = SceneConfig(image_size=32, seed=5)
    cfg.cam.backbone = BackboneConfig([8, 8, 16, 16], [1, 1, 1, 1], sge_groups=4)
    cfg.classifier.split_attention = SplitAttentionConfig(stage_widths=[8, 8, 16, 16], blocks_per_stage=[1, 1, 1, 1], fc_hidden=[16])
    cfg.cam.train = TrainConfig(initial_lr=1e-3, max_epochs=2, batch_size=16)
    cfg.classifier.train = TrainConfig(initial_lr=1e-3, max_epochs=1, batch_size=16)
    cfg.evaluation.n_samples = 60
    cfg.evaluation.plots = True
    save_config(cfg, root / "exp.json")
    assert main(["generate-data", "--config", str(root / "exp.json"), "--out", str(root / "data")]) == 0
    assert main(["train-cam", "--config", str(root / "exp.json"), "--data", str(root / "data"), "--out", str(root / "cam")]) == 0
    return root


def run(ws, *argv):
    return main([argv[0], "--config", str(ws / "exp.json"), *argv[1:]])


class TestGenerate:
    def test_artifacts(self, workspace):
        data = workspace / "data"
        assert (data / "manifest.jsonl").is_file() and (data / "dataset.json").is_file()
        lines = (data / "manifest.jsonl").read_text().splitlines()
        assert len(lines) == 60
        assert {json.loads(l)["split"] for l in lines} == {"train", "test"}

    def test_rerun_same_hash(self, workspace, tmp_path):
        assert run(workspace, "generate-data", "--out", str(tmp_path / "again")) == 0
        assert dataset_hash(tmp_path / "again") == dataset_hash(workspace / "data")

    def test_seed_changes_hash(self, workspace, tmp_path):
        assert run(workspace, "generate-data", "--seed", "9", "--n", "12", "--out", str(tmp_path / "s9")) == 0
        assert run(workspace, "generate-data", "--n", "12", "--out", str(tmp_path / "s5")) == 0
        assert dataset_hash(tmp_path / "s9") != dataset_hash(tmp_path / "s5")

    def test_missing_out_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["generate-data", "--n", "20"])
        assert exc.value.code == 2

    def test_too_few_samples(self, workspace, tmp_path):
        assert run(workspace, "generate-data", "--n", "5", "--out", str(tmp_path / "x")) == 1


class TestTrainCam:
    def test_history_and_checkpoint(self, workspace):
        rows = list(csv.DictReader(open(workspace / "cam" / "history.csv")))
        assert [r["epoch"] for r in rows] == ["1", "2"]
        assert set(rows[0]) == {"epoch", "train_loss", "val_loss", "lr"}
        rec = load_checkpoint(workspace / "cam" / "checkpoint.ten", num_classes=11)
        assert rec.config["kind"] == "cam" and rec.epoch == 2

    def test_resume_continues_numbering(self, workspace, tmp_path):
        code = run(workspace, "train-cam", "--data", str(workspace / "data"), "--out", str(tmp_path), "--resume", str(workspace / "cam" / "checkpoint.ten"))
        assert code == 0
        rows = list(csv.DictReader(open(tmp_path / "history.csv")))
        assert [r["epoch"] for r in rows] == ["1", "2", "3", "4"]

    def test_invalid_data_dir(self, workspace, tmp_path):
        assert run(workspace, "train-cam", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")) == 1


class TestTrainClassifier:
    def test_baseline_ignores_cam_with_warning(self, workspace, tmp_path):
        with pytest.warns(UserWarning, match="ignoring --cam-checkpoint"):
            code = run(
                workspace, "train-classifier", "--data", str(workspace / "data"), "--out", str(tmp_path),
                "--variant", "rgb_baseline", "--cam-checkpoint", str(workspace / "cam" / "checkpoint.ten"),
            )
        assert code == 0
        rec = load_checkpoint(tmp_path / "checkpoint.ten")
        assert rec.config["variant"] == "rgb_baseline" and rec.config["backbone"] is None

    def test_d3_builds_six_channel_stem(self, workspace, tmp_path):
        code = run(
            workspace, "train-classifier", "--data", str(workspace / "data"), "--out", str(tmp_path),
            "--variant", "semantic_deconv_d3", "--cam-checkpoint", str(workspace / "cam" / "checkpoint.ten"),
        )
        assert code == 0
        rec = load_checkpoint(tmp_path / "checkpoint.ten")
        assert rec.parameters["classifier.stem.conv.weight"].shape[1] == 6
        assert any(k.startswith("cam_model.") for k in rec.parameters)

    def test_cam_variant_needs_checkpoint(self, workspace, tmp_path):
        code = run(workspace, "train-classifier", "--data", str(workspace / "data"), "--out", str(tmp_path), "--variant", "semantic_deconv_d1")
        assert code == 2


@pytest.fixture(scope="module")
def evaluated(workspace):
    base = workspace / "clf_base"
    d1 = workspace / "clf_d1"
    assert run(workspace, "train-classifier", "--data", str(workspace / "data"), "--out", str(base), "--variant", "rgb_baseline") == 0
    assert run(
        workspace, "train-classifier", "--data", str(workspace / "data"), "--out", str(d1),
        "--variant", "semantic_deconv_d1", "--cam-checkpoint", str(workspace / "cam" / "checkpoint.ten"),
    ) == 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name in ("clf_base", "clf_d1"):
            assert run(workspace, "evaluate", "--checkpoint", str(workspace / name / "checkpoint.ten"), "--data", str(workspace / "data"), "--out", str(workspace / f"eval_{name}")) == 0
    return workspace / "eval_clf_base", workspace / "eval_clf_d1"


class TestEvaluate:
    def test_outputs(self, evaluated):
        out = evaluated[1]
        rows = list(csv.DictReader(open(out / "table.csv")))
        assert len(rows) == 11 and set(rows[0]) == {"label", "auc", "n_pos"}
        arrays = tenarch.load(out / "predictions.ten")
        assert arrays["probabilities"].shape == arrays["targets"].shape
        assert (out / "report.md").is_file()
        present = [r["label"] for r in rows if r["auc"]]
        assert sorted(p.name for p in out.glob("pr_*.svg")) == sorted(plot_name(n) for n in present)

    def test_deterministic(self, workspace, evaluated, tmp_path):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert run(workspace, "evaluate", "--checkpoint", str(workspace / "clf_d1" / "checkpoint.ten"), "--data", str(workspace / "data"), "--out", str(tmp_path)) == 0
        for name in ("table.csv", "predictions.ten", "report.md"):
            assert (tmp_path / name).read_bytes() == (evaluated[1] / name).read_bytes()

    def test_empty_test_split(self, workspace, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        (data / "dataset.json").write_text((workspace / "data" / "dataset.json").read_text())
        lines = [json.loads(l) for l in (workspace / "data" / "manifest.jsonl").read_text().splitlines()]
        for l in lines:
            l["split"] = "train"
            l["image_path"] = str(workspace / "data" / l["image_path"])
        (data / "manifest.jsonl").write_text("\n".join(json.dumps(l) for l in lines) + "\n")
        code = run(workspace, "evaluate", "--checkpoint", str(workspace / "clf_d1" / "checkpoint.ten"), "--data", str(data), "--out", str(tmp_path / "o"))
        assert code == 1


class TestReport:
    def test_two_dirs(self, evaluated, tmp_path):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert main(["report", "--in", str(evaluated[0]), str(evaluated[1]), "--out", str(tmp_path / "r.md")]) == 0
        text = (tmp_path / "r.md").read_text()
        assert "semantic_deconv_d1 vs rgb_baseline" in text
        assert "Majority labels (train share > 5%)" in text
        assert "majority mean" in text and "minority mean" in text

    def test_mismatched_vocabulary(self, evaluated, tmp_path):
        arrays = tenarch.load(evaluated[1] / "predictions.ten")
        meta = tenarch.unpack_json(arrays["__meta__"])
        meta["vocabulary"] = meta["vocabulary"][::-1]
        arrays["__meta__"] = tenarch.pack_json(meta)
        (tmp_path / "bad").mkdir()
        tenarch.save(tmp_path / "bad" / "predictions.ten", arrays)
        assert main(["report", "--in", str(evaluated[0]), str(tmp_path / "bad"), "--out", str(tmp_path / "r.md")]) == 1

    def test_single_dir_is_usage_error(self, evaluated, tmp_path):
        assert main(["report", "--in", str(evaluated[0]), "--out", str(tmp_path / "r.md")]) == 2


class TestAblate:
    def test_tables(self, workspace, tmp_path):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            code = run(workspace, "ablate", "--data", str(workspace / "data"), "--out", str(tmp_path), "--seed", "0", "--seed", "1", "--seed", "2")
        assert code == 0
        for s in (0, 1, 2):
            rows = read_rows_csv(tmp_path / f"seed_{s}" / "table.csv")
            assert list(rows) == list(VARIANTS)
            assert len(next(iter(rows.values()))) == 12  # 11 labels + macro
            deltas = read_rows_csv(tmp_path / f"seed_{s}" / "deltas.csv")
            assert all(v in (0.0, None) for v in deltas["semantic_deconv_d1"].values())
        mean = read_rows_csv(tmp_path / "table.csv")
        assert list(mean) == list(VARIANTS)
        assert (tmp_path / "deltas.csv").is_file() and (tmp_path / "report.md").is_file()

    def test_requires_reference_variant(self, workspace, tmp_path):
        code = run(workspace, "ablate", "--data", str(workspace / "data"), "--out", str(tmp_path), "--variant", "rgb_baseline")
        assert code == 2
