import json

import numpy as np
import pytest

from armpose import cli
from armpose.frames import read_paired_csv, read_sensor_csv

SUBCOMMANDS = ["synth", "calibrate", "train", "eval", "bench", "emulate", "serve", "infer"]


def run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def session_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "sess"
    assert run(["synth", "--out", str(out), "--duration", "14", "--seed", "7"]) == 0
    return out


@pytest.fixture(scope="module")
def ff_model(tmp_path_factory, session_dir):
    path = tmp_path_factory.mktemp("models") / "ff.json"
    code = run([
        "train", "--data", str(session_dir), "--arch", "ff", "--codec", "quat",
        "--out", str(path), "--epochs", "2", "--width", "16", "--batch", "128",
        "--seed", "5",
    ])
    assert code == 0
    return path


class TestUsage:
    @pytest.mark.parametrize("sub", SUBCOMMANDS)
    def test_help_exits_zero(self, sub, capsys):
        with pytest.raises(SystemExit) as exc_info:
            run([sub, "--help"])
        assert exc_info.value.code == 0
        assert "--seed" in capsys.readouterr().out

    def test_unknown_flag_exits_two(self):
        with pytest.raises(SystemExit) as exc_info:
            run(["synth", "--nonsense", "1", "--out", "x"])
        assert exc_info.value.code == 2

    def test_missing_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc_info:
            run([])
        assert exc_info.value.code == 2

    def test_bad_address_exits_two(self):
        with pytest.raises(SystemExit) as exc_info:
            run(["emulate", "--target", "nocolon"])
        assert exc_info.value.code == 2


class TestSynth:
    def test_writes_expected_files(self, session_dir):
        for name in ("sensor.csv", "truth.csv", "paired.csv", "emu.json"):
            assert (session_dir / name).exists()
        sensors = read_sensor_csv(session_dir / "sensor.csv")
        pairs = read_paired_csv(session_dir / "paired.csv")
        assert abs(len(sensors) - 14 * 50) <= 1
        assert len(pairs) == len(sensors)

    def test_deterministic(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert run(["synth", "--out", str(out), "--duration", "8", "--seed", "3"]) == 0
        assert (a / "sensor.csv").read_bytes() == (b / "sensor.csv").read_bytes()
        assert (a / "paired.csv").read_bytes() == (b / "paired.csv").read_bytes()

    def test_multi_session_layout(self, tmp_path):
        out = tmp_path / "multi"
        assert run(["synth", "--out", str(out), "--sessions", "2",
                    "--duration", "8", "--seed", "1"]) == 0
        assert (out / "session_00" / "sensor.csv").exists()
        assert (out / "session_01" / "sensor.csv").exists()


class TestCalibrate:
    def test_writes_state(self, session_dir, tmp_path):
        out = tmp_path / "calibration.json"
        assert run(["calibrate", "--data", str(session_dir), "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert set(doc) == {"rho_c", "theta_c", "captured_at"}
        assert len(doc["theta_c"]) == 4
        assert doc["captured_at"] == 6000.0


class TestTrain:
    def test_model_file_written(self, ff_model):
        doc = json.loads(ff_model.read_text())
        assert doc["format"] == "armpose-model"
        assert doc["spec"]["codec"] == "quat"

    def test_bit_identical_across_runs(self, session_dir, tmp_path):
        outs = []
        for name in ("m1.json", "m2.json"):
            path = tmp_path / name
            code = run([
                "train", "--data", str(session_dir), "--arch", "rnn", "--codec",
                "sixd", "--out", str(path), "--epochs", "1", "--width", "8",
                "--batch", "256", "--seed", "7",
            ])
            assert code == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_history_csv(self, session_dir, tmp_path):
        model = tmp_path / "m.json"
        hist = tmp_path / "hist.csv"
        code = run([
            "train", "--data", str(session_dir), "--arch", "ff", "--codec", "xyz",
            "--out", str(model), "--epochs", "2", "--width", "8",
            "--history", str(hist), "--seed", "0",
        ])
        assert code == 0
        lines = hist.read_text().splitlines()
        assert lines[0] == "epoch,train_mae,val_mae"
        assert len(lines) == 3

    def test_missing_data_is_runtime_error(self, tmp_path, capsys):
        code = run(["train", "--data", str(tmp_path / "nope"), "--arch", "ff",
                    "--codec", "quat", "--out", str(tmp_path / "m.json")])
        assert code == 1
        err = capsys.readouterr().err.strip().splitlines()[-1]
        doc = json.loads(err)
        assert "error" in doc and "message" in doc


class TestEval:
    def test_metrics_json(self, session_dir, ff_model, tmp_path, capsys):
        out = tmp_path / "metrics.json"
        code = run(["eval", "--data", str(session_dir), "--model", str(ff_model),
                    "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        assert set(doc) == {"wrist", "elbow", "combined"}
        assert doc["combined"]["n"] > 0


class TestConfigPrecedence:
    def test_config_overrides_default_but_not_flag(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"duration": 8.0, "sessions": 1}))
        out = tmp_path / "from_config"
        assert run(["synth", "--out", str(out), "--config", str(cfg), "--seed", "2"]) == 0
        sensors = read_sensor_csv(out / "sensor.csv")
        assert abs(len(sensors) - 400) <= 1  # 8 s at 50 Hz, from config
        out2 = tmp_path / "flag_wins"
        assert run(["synth", "--out", str(out2), "--config", str(cfg),
                    "--duration", "10", "--seed", "2"]) == 0
        assert abs(len(read_sensor_csv(out2 / "sensor.csv")) - 500) <= 1

    def test_broken_config_is_runtime_error(self, tmp_path, capsys):
        cfg = tmp_path / "broken.json"
        cfg.write_text("not json")
        code = run(["synth", "--out", str(tmp_path / "x"), "--config", str(cfg)])
        assert code == 1


class TestEmulateAndServe:
    def test_capture_then_replay(self, tmp_path, ff_model):
        capture = tmp_path / "capture.bin"
        assert run(["emulate", "--capture", str(capture), "--duration", "8",
                    "--seed", "4"]) == 0
        out1 = tmp_path / "poses1.jsonl"
        out2 = tmp_path / "poses2.jsonl"
        for out in (out1, out2):
            code = run(["serve", "--model", str(ff_model), "--replay", str(capture),
                        "--passes", "4", "--out", str(out), "--seed", "9"])
            assert code == 0
        assert out1.read_bytes() == out2.read_bytes()
        first = json.loads(out1.read_text().splitlines()[0])
        assert {"seq", "t", "elbow_mean", "wrist_mean", "modes"} <= set(first)

    def test_emulate_needs_target_or_capture(self, capsys):
        assert run(["emulate", "--duration", "8"]) == 1

    def test_infer_over_session(self, session_dir, ff_model, tmp_path):
        out = tmp_path / "poses.jsonl"
        code = run(["infer", "--data", str(session_dir), "--model", str(ff_model),
                    "--passes", "3", "--out", str(out), "--seed", "1"])
        assert code == 0
        lines = out.read_text().splitlines()
        assert len(lines) > 100
        doc = json.loads(lines[0])
        assert doc["n"] == 3


class TestBenchSmoke:
    def test_two_cell_micro_matrix(self, tmp_path):
        out = tmp_path / "bench"
        code = run([
            "bench", "--out", str(out), "--samples", "400", "--sessions", "1",
            "--cells", "ff:xyz,ff:quat", "--k", "2", "--epochs", "1",
            "--width", "8", "--batch", "128", "--seed", "1",
        ])
        assert code == 0
        lines = (out / "results.csv").read_text().splitlines()
        assert len(lines) == 3
        doc = json.loads((out / "results.json").read_text())
        assert len(doc["cells"]) == 2
