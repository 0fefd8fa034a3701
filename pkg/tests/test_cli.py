"""End-to-end CLI tests run through subprocesses against the installed
console entry point, covering exit codes, artifact layout, and run-to-run
byte determinism."""

import filecmp
import json
import os
import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "hydroforecast.cli"]


def assert_dirs_equal(a, b):
    """Byte-compare run artifacts; the config echo may differ only in 'out'."""
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    plain = [n for n in names if n != "resolved_config.json"]
    match, mismatch, errors = filecmp.cmpfiles(a, b, plain, shallow=False)
    assert not mismatch and not errors
    ca = json.loads((a / "resolved_config.json").read_text())
    cb = json.loads((b / "resolved_config.json").read_text())
    ca.pop("out"), cb.pop("out")
    assert ca == cb


def run_cli(*argv, env_extra=None, cwd=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(CLI + list(argv), capture_output=True, text=True,
                          env=env, cwd=cwd, timeout=600)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "task11"
    r = run_cli("gen-data", "--task", "1.1", "--trajectories", "24",
                "--length", "30", "--seed", "0", "--out", str(out))
    assert r.returncode == 0, r.stderr
    return out


@pytest.fixture(scope="module")
def checkpoint(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "train"
    r = run_cli("train", "--data", str(dataset_dir), "--model", "mlp-ode",
                "--max-epochs", "2", "--seed", "0", "--out", str(out))
    assert r.returncode == 0, r.stderr
    return out / "model.ckpt"


class TestGenData:
    def test_artifacts(self, dataset_dir):
        manifest = json.loads((dataset_dir / "manifest.json").read_text())
        assert manifest["task"] == "1.1"
        assert manifest["n"] == 4 and manifest["f"] == 2 and manifest["L"] == 30
        assert manifest["num_trajectories"] == 24
        assert set(manifest["splits"]) == {"train", "val", "test"}
        assert (dataset_dir / "traj_0000.csv").exists()
        assert (dataset_dir / "resolved_config.json").exists()

    def test_resolved_config_echo(self, dataset_dir):
        resolved = json.loads((dataset_dir / "resolved_config.json").read_text())
        assert resolved["subcommand"] == "gen-data"
        assert resolved["task"] == "1.1"
        assert resolved["seed"] == 0

    def test_byte_determinism(self, tmp_path):
        for tag in ("a", "b"):
            r = run_cli("gen-data", "--task", "1.3", "--trajectories", "12",
                        "--length", "20", "--seed", "3", "--threads", "1",
                        "--out", str(tmp_path / tag))
            assert r.returncode == 0, r.stderr
        assert_dirs_equal(tmp_path / "a", tmp_path / "b")

    def test_unknown_task(self, tmp_path):
        r = run_cli("gen-data", "--task", "9", "--out", str(tmp_path / "x"))
        assert r.returncode == 2

    def test_missing_out(self):
        r = run_cli("gen-data", "--task", "1.1")
        assert r.returncode == 2
        assert "--out" in r.stderr

    def test_out_env_fallback(self, tmp_path):
        r = run_cli("gen-data", "--task", "1.1", "--trajectories", "12",
                    "--length", "20",
                    env_extra={"HYDROFORECAST_OUT": str(tmp_path)})
        assert r.returncode == 0, r.stderr
        assert (tmp_path / "gen-data" / "manifest.json").exists()


class TestConfigFile:
    def test_config_file_and_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"task": "1.1", "trajectories": 12,
                                   "length": 20}))
        out = tmp_path / "out"
        r = run_cli("gen-data", "--config", str(cfg), "--trajectories", "16",
                    "--out", str(out))
        assert r.returncode == 0, r.stderr
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["num_trajectories"] == 16  # flag wins over file

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"task": "1.1", "warp_speed": 9}))
        r = run_cli("gen-data", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert r.returncode == 2
        assert "warp_speed" in r.stderr

    def test_invalid_json(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        r = run_cli("gen-data", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert r.returncode == 2

    def test_missing_config_file(self, tmp_path):
        r = run_cli("gen-data", "--task", "1.1",
                    "--config", str(tmp_path / "nope.json"),
                    "--out", str(tmp_path / "o"))
        assert r.returncode == 3


class TestTrain:
    def test_artifacts(self, checkpoint):
        out = checkpoint.parent
        assert checkpoint.exists()
        assert (out / "train_log.jsonl").exists()
        rows = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        assert len(rows) == 2
        assert (out / "resolved_config.json").exists()

    def test_missing_data_flag(self, tmp_path):
        r = run_cli("train", "--out", str(tmp_path / "t"))
        assert r.returncode == 2

    def test_lstm_with_solver_rejected(self, dataset_dir, tmp_path):
        r = run_cli("train", "--data", str(dataset_dir), "--model", "lstm",
                    "--solver", "rk4", "--out", str(tmp_path / "t"))
        assert r.returncode == 2
        assert "solver" in r.stderr

    def test_no_splits_in_manifest(self, dataset_dir, tmp_path):
        import shutil
        broken = tmp_path / "broken"
        shutil.copytree(dataset_dir, broken)
        manifest = json.loads((broken / "manifest.json").read_text())
        manifest["splits"] = None
        (broken / "manifest.json").write_text(json.dumps(manifest))
        r = run_cli("train", "--data", str(broken), "--max-epochs", "1",
                    "--out", str(tmp_path / "t"))
        assert r.returncode == 2
        assert "splits" in r.stderr

    def test_nonexistent_dataset(self, tmp_path):
        r = run_cli("train", "--data", str(tmp_path / "nope"),
                    "--out", str(tmp_path / "t"))
        assert r.returncode == 3


class TestPredictEval:
    def test_predict_artifacts(self, checkpoint, dataset_dir, tmp_path):
        out = tmp_path / "pred"
        r = run_cli("predict", "--checkpoint", str(checkpoint),
                    "--data", str(dataset_dir), "--split", "test",
                    "--out", str(out))
        assert r.returncode == 0, r.stderr
        manifest = json.loads((dataset_dir / "manifest.json").read_text())
        n_test = len(manifest["splits"]["test"])
        preds = sorted(out.glob("pred_*.csv"))
        assert len(preds) == n_test
        lines = preds[0].read_text().splitlines()
        assert lines[0] == "t,Fhat_0,Fhat_1"
        assert len(lines) == manifest["L"] + 1

    def test_eval_artifacts(self, checkpoint, dataset_dir, tmp_path):
        out = tmp_path / "eval"
        r = run_cli("eval", "--checkpoint", str(checkpoint),
                    "--data", str(dataset_dir), "--split", "val",
                    "--out", str(out))
        assert r.returncode == 0, r.stderr
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["rmse"] >= metrics["mae"] > 0.0
        assert metrics["split"] == "val"
        assert len(list(out.glob("overlay_*.svg"))) == len(
            json.loads((dataset_dir / "manifest.json").read_text())["splits"]["val"])
        assert "RMSE" in r.stdout

    def test_eval_byte_determinism(self, checkpoint, dataset_dir, tmp_path):
        for tag in ("a", "b"):
            r = run_cli("eval", "--checkpoint", str(checkpoint),
                        "--data", str(dataset_dir), "--split", "test",
                        "--threads", "1", "--out", str(tmp_path / tag))
            assert r.returncode == 0, r.stderr
        assert_dirs_equal(tmp_path / "a", tmp_path / "b")

    def test_corrupt_checkpoint_exit_5(self, checkpoint, dataset_dir, tmp_path):
        bad = tmp_path / "bad.ckpt"
        blob = bytearray(checkpoint.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        bad.write_bytes(bytes(blob))
        r = run_cli("predict", "--checkpoint", str(bad),
                    "--data", str(dataset_dir), "--out", str(tmp_path / "p"))
        assert r.returncode == 5
        assert "corrupt" in r.stderr.lower()

    def test_missing_checkpoint_exit_3(self, dataset_dir, tmp_path):
        r = run_cli("predict", "--checkpoint", str(tmp_path / "none.ckpt"),
                    "--data", str(dataset_dir), "--out", str(tmp_path / "p"))
        assert r.returncode == 3

    def test_model_data_dim_mismatch(self, checkpoint, tmp_path):
        out = tmp_path / "task2data"
        r = run_cli("gen-data", "--task", "2", "--trajectories", "12",
                    "--length", "40", "--out", str(out))
        assert r.returncode == 0, r.stderr
        r = run_cli("predict", "--checkpoint", str(checkpoint),
                    "--data", str(out), "--out", str(tmp_path / "p"))
        assert r.returncode == 2


class TestBench:
    def test_smoke_task1(self, tmp_path):
        out = tmp_path / "bench"
        # generate a small dataset ahead of time is not supported through
        # the CLI; instead run the smallest budget against generated data
        r = run_cli("bench", "--suite", "task2", "--preset", "desk",
                    "--max-epochs", "1", "--seed", "0", "--out", str(out))
        assert r.returncode == 0, r.stderr
        lines = (out / "results.csv").read_text().splitlines()
        assert len(lines) == 4  # header + MLP-ODE, Attention-ODE, LSTM
        assert lines[0].startswith("model,solver,task")
        payload = json.loads((out / "results.json").read_text())
        assert [row["model"] for row in payload["rows"]] == [
            "MLP-ODE", "Attention-ODE", "LSTM"]


class TestGradcheck:
    def test_passes(self):
        r = run_cli("gradcheck", "--model", "attention-ode", "--steps", "5")
        assert r.returncode == 0, r.stderr
        assert r.stdout.startswith("PASS")

    def test_negative_control(self):
        r = run_cli("gradcheck", "--model", "attention-ode", "--steps", "5",
                    env_extra={"HYDROFORECAST_BREAK_GRAD": "1"})
        assert r.returncode == 1
        assert r.stdout.startswith("FAIL")

    def test_steps_out_of_range(self):
        r = run_cli("gradcheck", "--steps", "500")
        assert r.returncode == 2


class TestUsage:
    def test_no_subcommand(self):
        r = run_cli()
        assert r.returncode == 2

    def test_unknown_flag(self):
        r = run_cli("gen-data", "--frobnicate")
        assert r.returncode == 2

    def test_help(self):
        r = run_cli("--help")
        assert r.returncode == 0
        for sub in ["gen-data", "train", "predict", "eval", "bench", "gradcheck"]:
            assert sub in r.stdout
