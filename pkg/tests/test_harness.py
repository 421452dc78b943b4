import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from drbench.errors import ConfigError, IncompatibleReports
from drbench.harness import MANIFEST_NAME, bundled_config, comparison_table, load_config, main, row_percentages
from drbench.metrics import MetricReport, format_table

TINY_SEG = {
    "task": "seg",
    "seed": 0,
    "data": {"train": {"phantom": {"preset": "seg", "num_images": 4, "image_size": 64}}},
    "model": {"input_size": 64, "base_channels": 4, "growth_rate": 4, "dense_layers": 1},
    "train": {"epochs": 1, "batch_size": 4},
    "export_masks": False,
}
TINY_GRADE = {
    "task": "grade",
    "seed": 0,
    "data": {
        "train": {"phantom": {"preset": "grading", "num_images": 16, "image_size": 64}},
        "test": {"phantom": {"preset": "grading", "num_images": 16, "image_size": 64}},
    },
    "model": {"base_channels": 4, "num_stages": 2},
    "train": {"epochs": 2, "batch_size": 8},
    "cam_images": 1,
}


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return path


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestConfig:
    def test_bundled_configs_validate(self):
        for name in ("seg", "synth", "grade", "transfer", "ladder"):
            assert load_config(bundled_config(name)).seed == 0

    def test_include_then_local_keys_then_overrides(self, tmp_path):
        write_cfg(tmp_path / "base.yaml", TINY_SEG)
        (tmp_path / "exp.yaml").write_text("include: base.yaml\ntrain:\n  epochs: 7\n")
        cfg = load_config(tmp_path / "exp.yaml", ["train.learning_rate=0.5"])
        assert cfg.experiment.train.epochs == 7
        assert cfg.experiment.train.batch_size == 4
        assert cfg.experiment.train.learning_rate == 0.5

    def test_seed_is_mandatory(self, tmp_path):
        data = dict(TINY_SEG)
        del data["seed"]
        with pytest.raises(ConfigError, match="seed"):
            load_config(write_cfg(tmp_path / "c.yaml", data))

    def test_error_points_at_the_offending_line(self, tmp_path):
        (tmp_path / "c.yaml").write_text("task: seg\nseed: 0\ndata:\n  train:\n    phantom: {}\ntrain:\n  epochs: -2\n")
        with pytest.raises(ConfigError) as info:
            load_config(tmp_path / "c.yaml")
        assert info.value.line == 7

    def test_included_key_anchors_to_included_file(self, tmp_path):
        (tmp_path / "base.yaml").write_text("task: seg\nseed: 0\nbogus: 1\n")
        (tmp_path / "exp.yaml").write_text("include: base.yaml\n")
        with pytest.raises(ConfigError) as info:
            load_config(tmp_path / "exp.yaml")
        assert info.value.path.endswith("base.yaml") and info.value.line == 3

    def test_missing_dataset_root(self, tmp_path):
        (tmp_path / "c.yaml").write_text("task: stats\nseed: 1\ndata:\n  root: nowhere\n")
        with pytest.raises(ConfigError) as info:
            load_config(tmp_path / "c.yaml")
        assert info.value.line == 4

    def test_include_cycle(self, tmp_path):
        (tmp_path / "a.yaml").write_text("include: b.yaml\n")
        (tmp_path / "b.yaml").write_text("include: a.yaml\n")
        with pytest.raises(ConfigError, match="cycle"):
            load_config(tmp_path / "a.yaml")

    def test_hash_ignores_output_location(self, tmp_path):
        a = load_config(write_cfg(tmp_path / "a.yaml", {**TINY_SEG, "output": "x"}))
        b = load_config(write_cfg(tmp_path / "b.yaml", {**TINY_SEG, "output": "y"}))
        c = load_config(write_cfg(tmp_path / "c.yaml", {**TINY_SEG, "seed": 1}))
        assert a.sha256() == b.sha256() != c.sha256()


class TestCli:
    def test_malformed_config_exits_2_with_line(self, tmp_path, capsys):
        (tmp_path / "bad.yaml").write_text("task: seg\nseed: 0\ndata: [oops\n")
        assert main(["run", str(tmp_path / "bad.yaml")]) == 2
        assert "bad.yaml:" in capsys.readouterr().err

    def test_task_mismatch_exits_2(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.yaml", TINY_SEG)
        assert main(["train-grade", str(cfg), "--output", str(tmp_path / "o")]) == 2

    def test_data_error_exits_3(self, tmp_path):
        (tmp_path / "ds").mkdir()
        (tmp_path / "ds" / "manifest.tsv").write_text("id\tgrade\n")
        (tmp_path / "c.yaml").write_text("task: stats\nseed: 0\ndata:\n  root: ds\n")
        assert main(["stats", str(tmp_path / "c.yaml"), "--output", str(tmp_path / "o")]) == 3

    def test_refuses_foreign_nonempty_output(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.yaml", {"task": "synth", "seed": 0, "phantom": {"num_images": 1, "image_size": 64}})
        out = tmp_path / "o"
        out.mkdir()
        (out / "keep.txt").write_text("mine")
        assert main(["synth", str(cfg), "--output", str(out), "--force"]) == 2
        assert (out / "keep.txt").read_text() == "mine"

    def test_synth_twice_is_byte_identical(self, tmp_path):
        cfg = write_cfg(tmp_path / "s.yaml", {"task": "synth", "seed": 4, "phantom": {"preset": "grading",
                                                                                      "num_images": 6, "image_size": 64}})
        assert main(["synth", str(cfg), "--output", str(tmp_path / "a")]) == 0
        assert main(["synth", str(cfg), "--output", str(tmp_path / "b")]) == 0
        a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
        assert a == b
        assert "dataset/manifest.tsv" in a and "dataset/planting_log.tsv" in a

    def test_output_root_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DRBENCH_OUTPUT_ROOT", str(tmp_path / "runs"))
        cfg = write_cfg(tmp_path / "mysynth.yaml", {"task": "synth", "seed": 0,
                                                     "phantom": {"num_images": 1, "image_size": 64}})
        assert main(["run", str(cfg)]) == 0
        assert (tmp_path / "runs" / "mysynth" / MANIFEST_NAME).is_file()

    def test_manifest_embeds_config_and_reruns(self, tmp_path):
        cfg = write_cfg(tmp_path / "s.yaml", {"task": "synth", "seed": 2, "phantom": {"num_images": 2, "image_size": 64}})
        assert main(["synth", str(cfg), "--output", str(tmp_path / "a")]) == 0
        manifest = json.loads((tmp_path / "a" / MANIFEST_NAME).read_text())
        assert manifest["seed"] == 2 and manifest["task"] == "synth"
        assert manifest["config"]["phantom"]["num_images"] == 2
        assert "time" not in json.dumps(manifest)
        cfg.unlink()  # the manifest alone must suffice
        assert main(["synth", str(tmp_path / "a" / MANIFEST_NAME), "--output", str(tmp_path / "b")]) == 0
        assert tree(tmp_path / "a") == tree(tmp_path / "b")

    @pytest.mark.slow
    def test_seg_smoke_on_bundled_phantom(self, tmp_path, capsys):
        out = tmp_path / "seg"
        code = main(["run", str(bundled_config("seg")), "--output", str(out), "--set", "train.epochs=1"])
        assert code == 0
        header = (out / "table.tsv").read_text().splitlines()[0].split("\t")
        assert header[:5] == ["run", "MA.Dice", "MA.ROC", "MA.PR", "MA.MAE"]
        assert len(header) == 1 + 6 * 4
        assert (out / "checkpoint.pt").is_file() and (out / "masks" / "overlay").is_dir()

    @pytest.mark.slow
    def test_seg_cross_validation_and_eval(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.yaml", {**TINY_SEG, "data": {**TINY_SEG["data"], "folds": 2}})
        assert main(["train-seg", str(cfg), "--output", str(tmp_path / "cv")]) == 0
        folds = [MetricReport.load(tmp_path / "cv" / f"fold{i}") for i in range(2)]
        mean = MetricReport.load(tmp_path / "cv")
        assert mean.metrics["MA"]["dice"] == pytest.approx(np.mean([f.metrics["MA"]["dice"] for f in folds]), abs=0)
        ck = tmp_path / "cv" / "fold0" / "checkpoint.pt"
        assert main(["eval-seg", str(cfg), "--output", str(tmp_path / "ev"), "--checkpoint", str(ck)]) == 0


class TestReport:
    def _grade_runs(self, tmp_path):
        cfg = write_cfg(tmp_path / "g.yaml", TINY_GRADE)
        for seed in (0, 1):
            assert main(["train-grade", str(cfg), "--output", str(tmp_path / f"g{seed}"), "--set", f"seed={seed}"]) == 0
        return [tmp_path / "g0", tmp_path / "g1"]

    @pytest.mark.slow
    def test_single_run_equals_its_own_report(self, tmp_path):
        run = self._grade_runs(tmp_path)[0]
        assert main(["report", str(run), "--out", str(tmp_path / "rep")]) == 0
        merged = (tmp_path / "rep" / "comparison.tsv").read_text().splitlines()
        own = (run / "table.tsv").read_text().splitlines()
        assert [ln.split("\t")[1:] for ln in merged] == [ln.split("\t")[1:] for ln in own]

    @pytest.mark.slow
    def test_two_grading_runs_delta_is_exact(self, tmp_path):
        runs = self._grade_runs(tmp_path)
        assert main(["report", *map(str, runs), "--out", str(tmp_path / "rep")]) == 0
        rows = [ln.split("\t") for ln in (tmp_path / "rep" / "comparison.tsv").read_text().splitlines()]
        assert rows[0][-1] == "delta.Q.W.Kappa"
        k = [MetricReport.load(r).metrics["all"]["qw_kappa"] for r in runs]
        assert float(rows[1][-1]) == 0.0
        assert float(rows[2][-1]) == k[1] - k[0]
        for name in ("g0", "g1"):
            pct = np.loadtxt(tmp_path / "rep" / f"confusion_percent_{name}.tsv")
            sums = pct.sum(axis=1)
            assert np.all((np.abs(sums - 100) <= 0.1) | (sums == 0))
            assert (tmp_path / "rep" / "figures" / f"confusion_{name}.png").is_file()

    def test_delta_column_arithmetic(self):
        a = MetricReport("grading", {"all": {"accuracy": 0.5, "qw_kappa": 0.1}})
        b = MetricReport("grading", {"all": {"accuracy": 0.6, "qw_kappa": 0.3}})
        rows = [ln.split("\t") for ln in comparison_table([("a", a), ("b", b)]).splitlines()]
        assert float(rows[2][-1]) == 0.3 - 0.1

    def test_single_report_table_unchanged(self):
        a = MetricReport("multilabel", {"mean": {"kappa": 0.2, "f1": 0.5, "auc_roc": 0.7}})
        assert comparison_table([("run", a)]) == format_table([("run", a)])

    def test_mixed_kinds_rejected(self):
        a = MetricReport("grading", {"all": {"accuracy": 0.5, "qw_kappa": 0.1}})
        b = MetricReport("multilabel", {"mean": {"kappa": 0.2, "f1": 0.5, "auc_roc": 0.7}})
        with pytest.raises(IncompatibleReports):
            comparison_table([("a", a), ("b", b)])

    def test_report_without_manifest_is_data_error(self, tmp_path):
        (tmp_path / "r").mkdir()
        assert main(["report", str(tmp_path / "r"), "--out", str(tmp_path / "o")]) == 3


class TestHeatmapRounding:
    @given(st.lists(st.lists(st.integers(0, 50), min_size=5, max_size=5), min_size=5, max_size=5))
    @settings(max_examples=200, deadline=None)
    def test_rows_read_100_percent(self, rows):
        cm = np.array(rows)
        pct = row_percentages(cm)
        for row, p in zip(cm, pct):
            if row.sum() == 0:
                assert not p.any()
            else:
                assert round(p.sum(), 6) == 100.0
                # each cell within one display unit of the exact share
                assert np.all(np.abs(p - 100 * row / row.sum()) < 0.1 + 1e-9)

    def test_largest_remainder(self):
        assert row_percentages(np.array([[1, 1, 1]])).tolist() == [[33.4, 33.3, 33.3]]
