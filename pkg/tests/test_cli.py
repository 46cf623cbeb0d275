import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from handcast import cli
from handcast import training as tr


def run(args):
    return cli.main(args)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A miniature but complete workspace: corpus, checkpoints, one epoch each."""
    ws = tmp_path_factory.mktemp("ws")
    assert run(["--workspace", str(ws), "generate", "--episodes", "3",
                "--detector-frames", "12", "--logs", "2", "--seed", "5"]) == 0
    cfg = ws / "train.cfg"
    tr.write_config_file(cfg, {
        "handnet": {"epochs": 1, "batch_size": 8, "learning_rate": 0.001},
        "regressor": {"epochs": 1, "batch_size": 8, "learning_rate": 0.001},
        "manip": {"epochs": 2, "batch_size": 32, "learning_rate": 0.002},
        "hands_only": {"epochs": 1},
        "future_detector": {"epochs": 1, "batch_size": 8},
    })
    assert run(["--workspace", str(ws), "train", "--stage", "all",
                "--config", str(cfg), "--seed", "0"]) == 0
    return ws


class TestGenerate:
    def test_writes_manifest_and_counts(self, workspace):
        manifest = json.loads((workspace / "corpus" / "manifest.json").read_text())
        assert manifest["interaction_episodes"] == 3
        assert manifest["robot_logs"] == 2
        assert manifest["detector_frames"] == 12

    def test_default_counts_match_protocol(self):
        parser = cli.build_parser()
        args = parser.parse_args(["generate"])
        assert args.episodes == 47 and args.logs == 50

    def test_zero_episodes_is_usage_error(self, tmp_path):
        assert run(["--workspace", str(tmp_path), "generate", "--episodes", "0"]) == cli.EXIT_USAGE

    def test_seed_repeat_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            assert run(["--workspace", str(tmp_path / sub), "generate", "--episodes", "2",
                        "--detector-frames", "6", "--logs", "1", "--seed", "9"]) == 0

        def digest(root):
            h = hashlib.sha256()
            for path in sorted((root / "corpus").rglob("*")):
                if path.is_file() and path.name != "generate_config.json":
                    h.update(path.relative_to(root).as_posix().encode())
                    h.update(path.read_bytes())
            return h.hexdigest()

        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_config_snapshot_written(self, workspace):
        snap = json.loads((workspace / "corpus" / "generate_config.json").read_text())
        assert snap["command"] == "generate" and snap["seed"] == 5


class TestTrain:
    def test_checkpoints_exist(self, workspace):
        ck = workspace / "checkpoints"
        for name in ("handnet.ckpt", "regressor_k10.ckpt", "manip.ckpt"):
            assert (ck / name).exists(), name

    def test_reports_valid_json(self, workspace):
        report = json.loads((workspace / "checkpoints" / "handnet.report.json").read_text())
        for key in ("stage", "seed", "epoch_losses", "final_loss", "wall_clock_s",
                    "config", "checkpoint"):
            assert key in report

    def test_regressor_without_handnet_is_dependency_error(self, tmp_path):
        assert run(["--workspace", str(tmp_path), "generate", "--episodes", "2",
                    "--detector-frames", "6", "--logs", "1"]) == 0
        code = run(["--workspace", str(tmp_path), "train", "--stage", "regressor"])
        assert code == cli.EXIT_DEPENDENCY

    def test_future_detector_stage_trains(self, workspace):
        cfg = workspace / "train.cfg"
        assert run(["--workspace", str(workspace), "train", "--stage", "future_detector",
                    "--config", str(cfg), "--seed", "0"]) == 0
        assert (workspace / "checkpoints" / "future_detector.ckpt").exists()

    def test_hands_only_without_detections_aborts_numerically(self, workspace):
        # the one-epoch toy detector finds no hands, so the hands-only
        # baseline has no training rows; that is a numeric abort, not a crash
        cfg = workspace / "train.cfg"
        code = run(["--workspace", str(workspace), "train", "--stage", "hands_only",
                    "--config", str(cfg), "--seed", "0"])
        assert code == cli.EXIT_NUMERIC


class TestEval:
    def test_eval_writes_tables(self, workspace, capsys):
        # train split: the tiny corpus has no test-range episodes
        code = run(["--workspace", str(workspace), "eval", "--methods", "full_k10",
                    "--split", "train"])
        assert code == 0
        out = capsys.readouterr().out
        assert "Mean Pixel Distance" in out
        assert "right hand" in out
        reports = workspace / "reports"
        assert (reports / "prediction_report.json").exists()
        assert (reports / "prediction_tables.txt").exists()

    def test_missing_checkpoint_dependency_error(self, workspace):
        code = run(["--workspace", str(workspace), "eval", "--methods", "full_k5",
                    "--split", "train"])
        assert code == cli.EXIT_DEPENDENCY

    def test_deterministic_report_bytes(self, workspace):
        run(["--workspace", str(workspace), "eval", "--methods", "full_k10",
             "--split", "train"])
        first = (workspace / "reports" / "prediction_report.json").read_bytes()
        run(["--workspace", str(workspace), "eval", "--methods", "full_k10",
             "--split", "train"])
        assert (workspace / "reports" / "prediction_report.json").read_bytes() == first


class TestPredict:
    def test_triptych_ppm_written(self, workspace):
        code = run(["--workspace", str(workspace), "predict", "--episode", "ep_000",
                    "--t", "12"])
        assert code == 0
        files = list((workspace / "overlays").glob("ep_000_t0012.ppm"))
        assert len(files) == 1
        raw = files[0].read_bytes()
        assert raw.startswith(b"P6\n")
        dims = raw.split(b"\n")[1].split()
        assert int(dims[0]) == 96 and int(dims[1]) == 96 * 3 + 4

    def test_out_of_range_t_is_usage_error(self, workspace):
        code = run(["--workspace", str(workspace), "predict", "--episode", "ep_000",
                    "--t", "9999"])
        assert code == cli.EXIT_USAGE

    def test_missing_episode_dependency_error(self, workspace):
        code = run(["--workspace", str(workspace), "predict", "--episode", "nope"])
        assert code == cli.EXIT_DEPENDENCY


class TestDemo:
    def test_untrained_negative_control_runs(self, workspace):
        code = run(["--workspace", str(workspace), "demo", "--episodes", "1",
                    "--seed", "3", "--untrained"])
        assert code == 0
        payload = json.loads((workspace / "demos" / "closed_loop_report.json").read_text())
        assert "success_rate" in payload and len(payload["episodes"]) == 1

    def test_trace_schema(self, workspace):
        run(["--workspace", str(workspace), "demo", "--episodes", "1", "--seed", "3",
             "--untrained"])
        payload = json.loads((workspace / "demos" / "closed_loop_report.json").read_text())
        trace = payload["episodes"][0]["trace"]
        assert trace, "expected at least one control step"
        assert {"t", "predicted_uv", "joints", "error_px"} <= set(trace[0])

    def test_oracle_mode_succeeds(self, workspace):
        code = run(["--workspace", str(workspace), "demo", "--episodes", "2",
                    "--seed", "3", "--oracle", "--untrained"])
        assert code == 0
        payload = json.loads((workspace / "demos" / "closed_loop_report.json").read_text())
        assert payload["success_rate"] == 1.0

    def test_missing_checkpoints_dependency_error(self, tmp_path):
        code = run(["--workspace", str(tmp_path), "demo", "--episodes", "1"])
        assert code == cli.EXIT_DEPENDENCY
