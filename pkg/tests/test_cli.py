import numpy as np
import pytest

from edrisk.cli import main
from edrisk.encode import load_dataset, load_stats
from edrisk.mlp import load_model
from edrisk.resample import load_indices


def run(*argv):
    return main([str(a) for a in argv])


def stage_through_split(out_dir, patients=400, seed=3):
    assert run("synth", "--out-dir", out_dir, "--patients", patients, "--seed", seed) == 0
    assert run(
        "encode", "--out-dir", out_dir,
        "--cohort", out_dir / "cohort.csv", "--spec", out_dir / "spec.txt",
        "--seed", seed,
    ) == 0
    assert run("split", "--out-dir", out_dir, "--seed", seed) == 0


class TestStages:
    def test_synth_writes_cohort_and_spec(self, tmp_path):
        assert run("synth", "--out-dir", tmp_path, "--patients", 50, "--seed", 1) == 0
        assert (tmp_path / "cohort.csv").exists()
        assert (tmp_path / "spec.txt").exists()

    def test_full_stage_chain(self, tmp_path):
        stage_through_split(tmp_path)
        ds = load_dataset(tmp_path / "features.hdr", tmp_path / "features.f64", tmp_path / "meta.tsv")
        stats = load_stats(tmp_path / "stats.tsv")
        pre, _ = load_indices(tmp_path / "pretrain.idx")
        test, _ = load_indices(tmp_path / "test.idx")
        assert len(pre) + len(test) == ds.n_rows
        assert stats.p > 0
        assert run(
            "train", "--out-dir", tmp_path, "--arch", "nn2", "--seed", 3,
            "--steps", 120, "--batch-size", 64,
        ) == 0
        model = load_model(tmp_path / "model_nn2.mlp")
        assert model.layer_sizes[1:] == [50, 50]
        assert model.n_inputs == stats.p
        assert run("eval", "--out-dir", tmp_path, "--arch", "nn2", "--seed", 3) == 0
        report = (tmp_path / "report_nn2.tsv").read_text().splitlines()
        assert len(report) == 10  # header + 9 standard filters
        assert (tmp_path / "roc_nn2_all.tsv").exists()

    def test_encode_deterministic_rerun(self, tmp_path):
        assert run("synth", "--out-dir", tmp_path, "--patients", 60, "--seed", 2) == 0
        args = ("encode", "--out-dir", tmp_path,
                "--cohort", tmp_path / "cohort.csv", "--spec", tmp_path / "spec.txt")
        assert run(*args) == 0
        first = (tmp_path / "features.f64").read_bytes()
        assert run(*args) == 0
        assert (tmp_path / "features.f64").read_bytes() == first

    def test_custom_eval_filters(self, tmp_path):
        stage_through_split(tmp_path)
        assert run(
            "train", "--out-dir", tmp_path, "--arch", "nn2", "--seed", 3,
            "--steps", 80, "--batch-size", 64,
        ) == 0
        assert run(
            "eval", "--out-dir", tmp_path, "--arch", "nn2", "--seed", 3,
            "--min-visits", 2, "--ccs-filter", "651/657",
        ) == 0
        lines = (tmp_path / "report_nn2.tsv").read_text().splitlines()
        assert len(lines) == 4  # header + all + v>=2 + ccs group
        assert any("651/657" in ln for ln in lines)


class TestErrors:
    def test_missing_stage_input_exit_3(self, tmp_path, capsys):
        code = run("train", "--out-dir", tmp_path / "nowhere", "--arch", "nn2")
        assert code == 3
        assert "missing stage input" in capsys.readouterr().err

    def test_eval_before_train_exit_3(self, tmp_path):
        stage_through_split(tmp_path, patients=100)
        assert run("eval", "--out-dir", tmp_path, "--arch", "nn8") == 3

    def test_bad_cohort_exit_1(self, tmp_path, capsys):
        assert run("synth", "--out-dir", tmp_path, "--patients", 20) == 0
        (tmp_path / "cohort.csv").write_text("foo,bar\n1,2\n")
        code = run("encode", "--out-dir", tmp_path,
                   "--cohort", tmp_path / "cohort.csv", "--spec", tmp_path / "spec.txt")
        assert code == 1
        assert "pipeline error" in capsys.readouterr().err

    def test_unknown_arch_rejected_by_parser(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("train", "--out-dir", tmp_path, "--arch", "nn3")
        assert exc.value.code == 2

    def test_bad_config_file_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("this line has no equals sign\n")
        code = run("--config", cfg, "synth", "--out-dir", tmp_path)
        assert code == 2
        assert "config error" in capsys.readouterr().err


class TestConfigFile:
    def test_config_supplies_defaults(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("patients=30\nseed=9\n")
        out = tmp_path / "out"
        assert run("--config", cfg, "synth", "--out-dir", out) == 0
        baseline = tmp_path / "base"
        assert run("synth", "--out-dir", baseline, "--patients", 30, "--seed", 9) == 0
        assert (out / "cohort.csv").read_text() == (baseline / "cohort.csv").read_text()

    def test_explicit_flag_wins_over_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("patients=30\n")
        out = tmp_path / "out"
        assert run("--config", cfg, "synth", "--out-dir", out, "--patients", 10) == 0
        # 10 patients, not 30
        header_plus_rows = (out / "cohort.csv").read_text().splitlines()
        pids = {ln.split(",")[0] for ln in header_plus_rows[1:]}
        assert len(pids) == 10


class TestRepro:
    def test_combined_report(self, tmp_path):
        assert run(
            "repro", "--out-dir", tmp_path, "--patients", 250, "--seed", 5,
            "--steps", 60, "--batch-size", 64,
        ) == 0
        tsv = (tmp_path / "report.tsv").read_text().splitlines()
        assert tsv[0].startswith("model\t")
        models = {ln.split("\t")[0] for ln in tsv[1:]}
        assert models == {"nn2", "nn4", "nn8"}
        assert (tmp_path / "report.txt").exists()
