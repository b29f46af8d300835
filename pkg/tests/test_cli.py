import json
import subprocess
import sys

import numpy as np
import pytest

from imb_lab.cli import main
from imb_lab.data import write_idx
from imb_lab.reporting import read_info_plane_csv
from imb_lab.training import load_checkpoint

SMALL = """\
dataset:
  kind: toy
  n_bits: 6
  holdout_fraction: 0.25
architecture:
  hidden: [4, 3]
training:
  n_samples: 4
  batch_size: 16
  learning_rate: 0.5
  init_scale: 4.0
  epochs: 4
  mi_eval_every: 2
plots: true
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL)
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestTrain:
    def test_artifacts(self, tmp_path, small_config, capsys):
        out = tmp_path / "run"
        assert run("train", "--config", small_config, "--out", out) == 0
        assert {p.name for p in out.iterdir()} == {
            "config.yaml", "checkpoints", "train_log.json", "info_plane.csv", "info_plane.svg"
        }
        points = read_info_plane_csv(out / "info_plane.csv")
        assert sorted({p.epoch for p in points}) == [0, 2, 4]
        assert all(sum(p.epoch == e for p in points) == 2 for e in (0, 2, 4))
        log = json.loads((out / "train_log.json").read_text())
        assert log["records"][-1]["epoch"] == 4
        assert "trained joint" in capsys.readouterr().out

    def test_mle_equals_joint_with_nll_weights(self, tmp_path, small_config):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("train", "--config", small_config, "--algorithm", "mle", "--out", a) == 0
        assert run("train", "--config", small_config, "--gamma", "1,0,0", "--out", b) == 0
        for ckpt in sorted((a / "checkpoints").iterdir()):
            pa, _ = load_checkpoint(ckpt)
            pb, _ = load_checkpoint(b / "checkpoints" / ckpt.name)
            for x, y in zip(pa.arrays(), pb.arrays()):
                assert x.tobytes() == y.tobytes()

    def test_same_seed_same_csv(self, tmp_path, small_config):
        for name in ("a", "b"):
            assert run("train", "--config", small_config, "--seed", 5, "--out", tmp_path / name) == 0
        assert (tmp_path / "a" / "info_plane.csv").read_bytes() == (tmp_path / "b" / "info_plane.csv").read_bytes()

    def test_missing_dataset_leaves_nothing(self, tmp_path):
        cfg = tmp_path / "m.yaml"
        cfg.write_text(f"dataset:\n  kind: mnist\n  path: {tmp_path / 'nowhere'}\narchitecture:\n  hidden: [8]\n")
        out = tmp_path / "out"
        assert run("train", "--config", cfg, "--out", out) == 2
        assert not out.exists()
        assert [p.name for p in tmp_path.iterdir()] == ["m.yaml"]

    def test_invalid_config(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("dataset:\n  kind: toy\ntraining:\n  epochz: 1\n")
        assert run("train", "--config", cfg, "--out", tmp_path / "o") == 2
        assert "bad.yaml:4" in capsys.readouterr().err

    def test_bad_gamma_list(self, tmp_path, small_config):
        assert run("train", "--config", small_config, "--gamma", "1,x", "--out", tmp_path / "o") == 2
        assert run("train", "--config", small_config, "--gamma", "1,0", "--out", tmp_path / "o") == 2

    def test_refuses_non_empty_output(self, tmp_path, small_config):
        out = tmp_path / "o"
        out.mkdir()
        (out / "keep").write_text("x")
        assert run("train", "--config", small_config, "--out", out) == 2

    def test_needs_config_or_preset(self, tmp_path):
        assert run("train", "--out", tmp_path / "o") == 2


class TestEvalAndInfoPlane:
    @pytest.fixture
    def trained(self, tmp_path, small_config):
        out = tmp_path / "run"
        assert run("train", "--config", small_config, "--out", out) == 0
        return out

    def test_eval(self, trained, tmp_path, capsys):
        report = tmp_path / "eval.json"
        assert run("eval", trained, "--repeats", 3, "--out", report) == 0
        doc = json.loads(report.read_text())
        assert doc["repeats"] == 3 and doc["n_examples"] == 16 and doc["checkpoint_epoch"] == 4
        assert "+-" in capsys.readouterr().out

    def test_eval_missing_checkpoint(self, tmp_path):
        assert run("eval", tmp_path / "none.npz") == 2
        (tmp_path / "empty").mkdir()
        assert run("eval", tmp_path / "empty") == 2

    def test_eval_architecture_mismatch(self, trained, tmp_path):
        mnist = tmp_path / "mnist"
        mnist.mkdir()
        for stem in ("train", "t10k"):
            write_idx(mnist / f"{stem}-images-idx3-ubyte", np.zeros((3, 2, 2), np.uint8))
            write_idx(mnist / f"{stem}-labels-idx1-ubyte", np.array([1, 2, 3], np.uint8))
        assert run("eval", trained, "--dataset", mnist) == 2

    def test_info_plane_single_run(self, trained, tmp_path):
        out = tmp_path / "ip"
        assert run("info-plane", trained, "--plot", "--out", out) == 0
        again = read_info_plane_csv(out / "info_plane.csv")
        logged = read_info_plane_csv(trained / "info_plane.csv")
        assert [(p.epoch, p.layer) for p in again] == [(p.epoch, p.layer) for p in logged]
        np.testing.assert_allclose([p.i_x for p in again], [p.i_x for p in logged], atol=1e-10)
        assert (out / "info_plane.svg").exists()

    def test_info_plane_seed_directory(self, tmp_path, small_config):
        root = tmp_path / "seeds"
        for s in range(3):
            assert run("train", "--config", small_config, "--seed", s, "--out", root / f"seed{s}") == 0
        assert run("info-plane", root) == 0
        mean = read_info_plane_csv(root / "info_plane_mean.csv")
        parts = [read_info_plane_csv(root / f"info_plane_seed{s}.csv") for s in range(3)]
        np.testing.assert_allclose([p.i_y for p in mean], np.mean([[p.i_y for p in t] for t in parts], axis=0))

    def test_info_plane_empty_directory(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert run("info-plane", tmp_path / "empty") == 2

    def test_info_plane_wide_layers(self, tmp_path):
        cfg = tmp_path / "wide.yaml"
        cfg.write_text(SMALL.replace("hidden: [4, 3]", "hidden: [16]").replace("mi_eval_every: 2", "mi_eval_every: 0"))
        assert run("train", "--config", cfg, "--out", tmp_path / "w") == 0
        assert run("info-plane", tmp_path / "w") == 3


class TestProbeAndData:
    def test_probe_builtin(self, tmp_path):
        out = tmp_path / "p.json"
        assert run("probe-conflict", "--instance", "sufficient", "--grid", 5, "--out", out) == 0
        assert json.loads(out.read_text())["verdict"] == "non-conflicting (condition a)"

    def test_probe_spec_file(self, tmp_path):
        spec = tmp_path / "inst.json"
        spec.write_text(json.dumps({"pxy": [[0.3, 0.1], [0.1, 0.5]]}))
        assert run("probe-conflict", "--spec", spec, "--grid", 5, "--out", tmp_path) == 0
        assert (tmp_path / "probe_inst.json").exists()

    def test_probe_bad_spec(self, tmp_path):
        spec = tmp_path / "bad.json"
        spec.write_text("[1, 2]")
        assert run("probe-conflict", "--spec", spec) == 2

    def test_gen_data_csv(self, tmp_path):
        out = tmp_path / "d.csv"
        assert run("gen-data", "--n-bits", 4, "--out", out) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 17 and lines[0].endswith(",y")

    def test_gen_data_idx(self, tmp_path):
        from imb_lab.data import read_idx

        assert run("gen-data", "--n-bits", 3, "--format", "idx", "--out", tmp_path / "idx") == 0
        assert read_idx(tmp_path / "idx" / "train-labels-idx1-ubyte").shape == (8,)

    def test_gen_data_invalid(self, tmp_path):
        assert run("gen-data", "--n-bits", 40, "--out", tmp_path / "d.csv") == 2

    def test_thread_limit(self, tmp_path, monkeypatch):
        monkeypatch.setenv("IMB_LAB_THREADS", "0")
        assert run("gen-data", "--n-bits", 2, "--out", tmp_path / "d.csv") == 2
        monkeypatch.setenv("IMB_LAB_THREADS", "1")
        assert run("gen-data", "--n-bits", 2, "--out", tmp_path / "d.csv") == 0


class TestAttackCommand:
    def test_attack_on_idx_dataset(self, tmp_path):
        rng = np.random.default_rng(0)
        mnist = tmp_path / "mnist"
        mnist.mkdir()
        for stem, n in (("train", 200), ("t10k", 20)):
            write_idx(mnist / f"{stem}-images-idx3-ubyte", rng.integers(0, 256, (n, 4, 4), dtype=np.uint8))
            write_idx(mnist / f"{stem}-labels-idx1-ubyte", rng.integers(0, 10, n, dtype=np.uint8))
        cfg = tmp_path / "m.yaml"
        cfg.write_text(
            f"dataset:\n  kind: mnist\n  path: {mnist}\n  holdout_fraction: 0.0\n"
            "architecture:\n  hidden: [8]\ntraining:\n  epochs: 1\n  n_samples: 2\n  batch_size: 50\n"
        )
        assert run("train", "--config", cfg, "--out", tmp_path / "run") == 0
        out = tmp_path / "att"
        assert run("attack", tmp_path / "run", "--subset", 5, "--steps", 3, "--radius", 0.5, "--out", out) == 0
        lines = (out / "attack.csv").read_text().splitlines()
        assert lines[0] == "image_index,mode,target,success,l2_norm" and len(lines) == 6
        summary = json.loads((out / "attack.json").read_text())
        assert 0 <= summary["robustness_percent"] <= 100
        assert run("attack", tmp_path / "run", "--mode", "targeted", "--subset", 2, "--steps", 2,
                   "--out", tmp_path / "t.csv") == 0
        assert len((tmp_path / "t.csv").read_text().splitlines()) == 1 + 2 * 9


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "imb_lab.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "eval", "info-plane", "probe-conflict", "attack", "gen-data"):
        assert cmd in proc.stdout
