import json

import pandas as pd
import pytest

from structalign import cli
from structalign.cli.commands import EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE
from structalign.reporting import CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE

CONFIG_TEXT = """\
# two tiny tasks
k_tasks=2
cats_per_task=2
shots=4
test_per_category=3
n_tokens=3
n_frames=2
latent_dim=4
instance_dim=1
epochs=1
batch=8
layers=1
experts=2
k_e=1
lora_rank=2
dims=8,8
"""

CSV_FILES = ["metrics.csv", "geometry.csv", "train_log.csv", "prototype_similarity.csv"]


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(CONFIG_TEXT, encoding="utf-8")
    return path


def test_run_writes_run_directory(config_path, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", str(config_path), "--out", str(out), "--dump-sim"]) == EXIT_OK

    for name in CSV_FILES + ["similarity.csv", SUMMARY_FILE, CHECKPOINT_FILE]:
        assert (out / name).is_file()
    summary = json.loads((out / SUMMARY_FILE).read_text(encoding="utf-8"))
    assert summary["k_tasks"] == 2
    assert summary["frozen_base_intact"] is True
    assert "seed=0 arm=full" in capsys.readouterr().out
    metrics = pd.read_csv(out / METRICS_FILE, dtype={"eval_task": str})
    assert list(metrics["eval_task"]) == ["1", "all", "1", "2", "all"]


def test_framework_arm_echoes_zero_weights(config_path, tmp_path):
    out = tmp_path / "framework"
    assert cli.main(["run", str(config_path), "--out", str(out), "--ablation", "framework"]) == EXIT_OK
    config = json.loads((out / SUMMARY_FILE).read_text(encoding="utf-8"))["config"]
    assert config["lambda1"] == 0.0
    assert config["lambda2"] == 0.0
    assert config["ablation"] == "framework"


def test_same_seed_gives_identical_csvs(config_path, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(config_path), "--out", str(first)]) == EXIT_OK
    assert cli.main(["run", str(config_path), "--out", str(second)]) == EXIT_OK
    for name in CSV_FILES + [CHECKPOINT_FILE]:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_existing_output_needs_overwrite(config_path, tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / "keep.txt").write_text("x", encoding="utf-8")

    assert cli.main(["run", str(config_path), "--out", str(out)]) == EXIT_USAGE
    assert (out / "keep.txt").is_file()

    assert cli.main(["run", str(config_path), "--out", str(out), "--overwrite"]) == EXIT_OK
    assert not (out / "keep.txt").exists()
    assert (out / METRICS_FILE).is_file()


def test_multiple_seeds_get_subdirectories(config_path, tmp_path):
    out = tmp_path / "seeds"
    argv = ["run", str(config_path), "--out", str(out), "--seed", "0", "--seed", "1", "--jobs", "2"]
    assert cli.main(argv) == EXIT_OK
    assert (out / "seed-0" / METRICS_FILE).is_file()
    assert (out / "seed-1" / METRICS_FILE).is_file()


def test_missing_config_file(tmp_path):
    assert cli.main(["run", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert not (tmp_path / "o").exists()


def test_invalid_config_value(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("k_e=9\nexperts=2\n", encoding="utf-8")
    assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == EXIT_USAGE


@pytest.mark.parametrize(
    "text",
    ["k_tasks=1\ncats_per_task=1\n", "latent_dim=40\n"],
)
def test_stream_shape_errors_are_usage_errors(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text, encoding="utf-8")
    assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert not (tmp_path / "o").exists()


def test_unknown_argument():
    assert cli.main(["run", "--bogus"]) == EXIT_USAGE
    assert cli.main([]) == EXIT_USAGE


class TestReport:
    def test_identical_runs_have_zero_spread(self, config_path, tmp_path, capsys):
        first, second = tmp_path / "a", tmp_path / "b"
        cli.main(["run", str(config_path), "--out", str(first)])
        cli.main(["run", str(config_path), "--out", str(second)])
        report_dir = tmp_path / "report"

        assert cli.main(["report", str(first), str(second), "--out", str(report_dir)]) == EXIT_OK

        aggregate = pd.read_csv(report_dir / "aggregate.csv", dtype={"eval_task": str})
        assert (aggregate["r1_std"] == 0).all()
        assert (aggregate["runs"] == 2).all()
        trajectory = pd.read_csv(report_dir / "trajectory.csv")
        assert list(trajectory["after_task"]) == [1, 2]

    def test_multi_seed_directory_is_expanded(self, config_path, tmp_path, capsys):
        out = tmp_path / "seeds"
        cli.main(["run", str(config_path), "--out", str(out), "--seed", "0", "--seed", "1"])
        capsys.readouterr()

        assert cli.main(["report", str(out)]) == EXIT_OK

        printed = capsys.readouterr().out
        assert printed.splitlines()[0].startswith("after_task,eval_task,r1_mean,r1_std")

    def test_directory_without_runs(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert cli.main(["report", str(empty)]) == EXIT_USAGE


def test_geometry_report(config_path, tmp_path, capsys):
    out = tmp_path / "run"
    cli.main(["run", str(config_path), "--out", str(out)])
    capsys.readouterr()

    assert cli.main(["geometry-report", str(out)]) == EXIT_OK

    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("eta=")
    assert any(line.startswith("micd=") for line in lines)
    assert "step,eta,epsilon,gamma,micd" in lines


def test_sweep_writes_grid(config_path, tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    argv = ["sweep", str(config_path), "--out", str(out), "--lambda1", "0", "--lambda2", "0", "1"]
    assert cli.main(argv) == EXIT_OK
    grid = pd.read_csv(out)
    assert list(zip(grid["lambda1"], grid["lambda2"])) == [(0.0, 0.0), (0.0, 1.0)]


class TestVerify:
    def test_filtered_checks_pass(self, capsys):
        assert cli.main(["verify", "--filter", "etf"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "[PASS] etf.gram" in out
        assert "1/1 checks passed" in out

    def test_injected_fault_fails(self, capsys):
        assert cli.main(["verify", "--filter", "etf", "--inject-fault", "scale-prototype"]) == EXIT_CHECK_FAILED
        assert "[FAIL] etf.gram" in capsys.readouterr().out

    def test_unknown_filter(self):
        assert cli.main(["verify", "--filter", "nothing"]) == EXIT_USAGE

    @pytest.mark.slow
    def test_grad_filter_selects_gradient_checks(self, capsys):
        assert cli.main(["verify", "--filter", "grad"]) == EXIT_OK
        out = capsys.readouterr().out
        lines = [line for line in out.splitlines() if line.startswith("[")]
        assert [line.split(":")[0] for line in lines] == ["[PASS] grad.scl", "[PASS] grad.etf", "[PASS] grad.crp"]
        assert "3/3 checks passed" in out

    @pytest.mark.slow
    def test_full_suite_passes(self, capsys):
        assert cli.main(["verify"]) == EXIT_OK
        assert "9/9 checks passed" in capsys.readouterr().out
