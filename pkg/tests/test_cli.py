import hashlib
import json
from pathlib import Path

import pytest

from qplab.cli import load_config, load_trace_dir, main


def scenario_dict(**overrides):
    d = {
        "plant": "linear",
        "feedback": "default",
        "design": {"lambda": 8.0, "eps": 0.1, "nu": 0.1, "delta": 0.05,
                   "M": 10.0, "Delta": 5e-5, "mu0": 1.0, "tau": 1.0},
        "grid_n": 50,
        "t_end": 6.0,
        "x0": [0.9],
        "u0": {"kind": "constant", "value": 0.5},
        "mode": "state_q",
        "seed": 0,
        "snapshot_stride": 5,
        "diag_stride": 0,
    }
    d.update(overrides)
    return d


def write_config(tmp_path, name="cfg.json", **overrides):
    path = tmp_path / name
    path.write_text(json.dumps(scenario_dict(**overrides)))
    return path


def sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestGainsCommand:
    def test_all_conditions_pass(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        rc = main(["gains", "--config", str(cfg), "--out", str(tmp_path / "g")])
        out = capsys.readouterr().out
        assert rc == 0
        assert "small_gain_ok" in out
        ledger = json.loads((tmp_path / "g" / "ledger.json").read_text())
        assert ledger["thm1_ok"] is True
        assert ledger["lambda"] == 8.0

    def test_condition_failure_exit_code(self, tmp_path, capsys):
        d = scenario_dict()
        d["design"]["Delta"] = 1e-3  # above the range/error threshold
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps(d))
        rc = main(["gains", "--config", str(cfg), "--out", str(tmp_path / "g")])
        assert rc == 2
        assert "False" in capsys.readouterr().out

    def test_invalid_delta_exit_code(self, tmp_path, capsys):
        d = scenario_dict()
        d["design"]["delta"] = 0.5  # >= min(sigma, nu)
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps(d))
        rc = main(["gains", "--config", str(cfg), "--out", str(tmp_path / "g")])
        assert rc == 1
        assert "InvalidDelta" in capsys.readouterr().err

    def test_missing_config(self, tmp_path, capsys):
        rc = main(["gains", "--config", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path)])
        assert rc == 1

    def test_toml_config(self, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text(
            'plant = "linear"\nfeedback = "default"\n'
            "[design]\n"
            'lambda = 8.0\neps = 0.1\nnu = 0.1\ndelta = 0.05\n'
            "M = 10.0\nDelta = 5e-5\nmu0 = 1.0\ntau = 1.0\n")
        rc = main(["gains", "--config", str(cfg), "--out", str(tmp_path / "g")])
        assert rc == 0


class TestSimulateCommand:
    def test_outputs_and_manifest(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        names = {"trace.csv", "snapshots.csv", "events.json", "ledger.json",
                 "manifest.json"}
        assert names <= {p.name for p in out.iterdir()}
        manifest = json.loads((out / "manifest.json").read_text())
        for name, digest in manifest["outputs"].items():
            assert sha(out / name) == digest
        events = json.loads((out / "events.json").read_text())
        assert sum(e["kind"] == "phase_change" for e in events["events"]) == 1

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")])
        for name in ("trace.csv", "snapshots.csv", "events.json", "ledger.json"):
            assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name)

    def test_manifest_is_reusable_as_config(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
        rc = main(["simulate", "--config", str(tmp_path / "a" / "manifest.json"),
                   "--out", str(tmp_path / "c")])
        assert rc == 0
        assert sha(tmp_path / "a" / "trace.csv") == sha(tmp_path / "c" / "trace.csv")

    def test_open_loop_zero_input_column(self, tmp_path):
        cfg = write_config(tmp_path, mode="open_loop", t_end=2.0)
        out = tmp_path / "run"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        rows = (out / "trace.csv").read_text().strip().splitlines()
        header = rows[0].split(",")
        u_col = header.index("U")
        assert all(float(r.split(",")[u_col]) == 0.0 for r in rows[1:])

    def test_mode_and_grid_overrides(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        rc = main(["simulate", "--config", str(cfg), "--out", str(out),
                   "--mode", "nominal", "--grid-n", "64"])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["mode"] == "nominal"
        assert manifest["config"]["grid_n"] == 64

    def test_refine_writes_second_run(self, tmp_path):
        cfg = write_config(tmp_path, t_end=2.0)
        out = tmp_path / "run"
        assert main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--refine"]) == 0
        assert (out / "refine_2n" / "trace.csv").exists()
        refined = json.loads((out / "refine_2n" / "manifest.json").read_text())
        assert refined["config"]["grid_n"] == 100

    def test_config_error_exit_code(self, tmp_path):
        cfg = write_config(tmp_path, mode="bogus")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1

    def test_blowup_exit_code_and_partial_flush(self, tmp_path):
        cfg = write_config(tmp_path, plant="unstable", mode="open_loop",
                           t_end=800.0, grid_n=10, x0=[1.0],
                           u0={"kind": "constant", "value": 0.0},
                           snapshot_stride=1000)
        out = tmp_path / "run"
        rc = main(["simulate", "--config", str(cfg), "--out", str(out)])
        assert rc == 3
        assert (out / "trace.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert "partial" in manifest["note"]


class TestVerifyCommand:
    def test_pass_and_report(self, tmp_path, capsys):
        cfg = write_config(tmp_path, t_end=8.0)
        out = tmp_path / "run"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        rc = main(["verify", "--trace-dir", str(out),
                   "--out", str(tmp_path / "report.json")])
        assert rc == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["all_pass"] is True

    def test_loaded_trace_matches_in_memory(self, tmp_path):
        cfg = write_config(tmp_path, t_end=4.0)
        out = tmp_path / "run"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        trace = load_trace_dir(out)
        assert trace.t1_star == 1.0
        assert len(trace) == 201
        assert trace.snap_u.shape[1] == 51

    def test_truncated_trace_fails(self, tmp_path, capsys):
        cfg = write_config(tmp_path, t_end=2.0)
        out = tmp_path / "run"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        trace_file = out / "trace.csv"
        lines = trace_file.read_text().splitlines()
        trace_file.write_text("\n".join(lines[:len(lines) // 2]) + "\n")
        assert main(["verify", "--trace-dir", str(out)]) == 1

    def test_missing_inputs(self, tmp_path):
        assert main(["verify", "--trace-dir", str(tmp_path / "nothing")]) == 1

    def test_nominal_trace_skips_supervised_checks(self, tmp_path, capsys):
        cfg = write_config(tmp_path, mode="nominal", t_end=2.0)
        out = tmp_path / "run"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        rc = main(["verify", "--trace-dir", str(out)])
        assert rc == 0
        assert "skipped" in capsys.readouterr().out


class TestSweepCommand:
    def test_empty_grid_writes_header_only(self, tmp_path):
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({"base": scenario_dict(t_end=2.0), "grid": {}}))
        out = tmp_path / "sw"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("run,")

    @pytest.mark.filterwarnings("ignore:state_q run with failing")
    def test_delta_sweep_rows_and_flags(self, tmp_path, monkeypatch):
        monkeypatch.setenv("QPL_THREADS", "1")
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({
            "base": scenario_dict(t_end=3.0, grid_n=20),
            "grid": {"Delta": [1e-5, 5e-5, 1e-3]},
        }))
        out = tmp_path / "sw"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 4
        header = lines[0].split(",")
        flag_col = header.index("thm_ok")
        flags = [r.split(",")[flag_col] for r in lines[1:]]
        assert flags == ["True", "True", "False"]

    def test_grid_refinement_consistency(self, tmp_path, monkeypatch):
        monkeypatch.setenv("QPL_THREADS", "1")
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({
            "base": scenario_dict(mode="nominal", t_end=6.0, x0=[1.0]),
            "grid": {"grid_n": [100, 200, 400]},
        }))
        out = tmp_path / "sw"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        header = lines[0].split(",")
        col = header.index("final_norm")
        norms = [float(r.split(",")[col]) for r in lines[1:]]
        spread = (max(norms) - min(norms)) / max(norms)
        assert spread < 0.01

    def test_bad_sweep_key(self, tmp_path):
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({"base": scenario_dict(), "grid": {"nope": [1]}}))
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1

    def test_row_failures_recorded(self, tmp_path, monkeypatch):
        monkeypatch.setenv("QPL_THREADS", "1")
        base = scenario_dict(plant="unstable", mode="open_loop", t_end=800.0,
                             grid_n=10, x0=[1.0],
                             u0={"kind": "constant", "value": 0.0},
                             snapshot_stride=1000)
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({"base": base, "grid": {"x0_scale": [1.0]}}))
        out = tmp_path / "sw"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 2
        assert "error" in lines[1]


class TestConfigLoading:
    def test_json_parse_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(Exception):
            load_config(path)
