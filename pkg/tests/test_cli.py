"""CLI: exit codes, persisted artifacts, determinism, worker attachment."""

import json
import sys
from pathlib import Path

import pytest

from tofsearch.cli import main, parse_grid
from tofsearch.core import ConfigError
from tofsearch.reporting import check_manifest_integrity

DATA = Path(__file__).parent / "data"
WORKER_CMD = (
    f"{sys.executable} {Path(__file__).parent / 'minimal_worker.py'} "
    f"--fixture {DATA / 'landscape_fixture.json'}"
)


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "algorithm": "tof",
        "schedule": {"roots": 4, "depth": 8},
        "prompt": {"text": "a kite climbs into a storm", "id": "kite"},
        "master_seed": 11,
        "landscape": {"landscape_seed": 424242},
    }))
    return path


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestRunCommands:
    def test_tof_writes_manifest_and_events(self, config_path, tmp_path, capsys):
        out = tmp_path / "run"
        assert run_cli("tof", "--config", config_path, "--out", out) == 0
        printed = capsys.readouterr().out
        assert "best_score=" in printed and "nfe=" in printed
        assert (out / "manifest.json").exists()
        assert (out / "events.jsonl").exists()
        assert check_manifest_integrity(out)

    def test_same_seed_byte_identical_manifest_across_threads(
            self, config_path, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli("tof", "--config", config_path, "--seed", "3",
                       "--out", a, "--threads", "1") == 0
        assert run_cli("tof", "--config", config_path, "--seed", "3",
                       "--out", b, "--threads", "8") == 0
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
        assert (a / "events.jsonl").read_bytes() == (b / "events.jsonl").read_bytes()

    def test_seed_flag_changes_the_run(self, config_path, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli("tof", "--config", config_path, "--seed", "3", "--out", a)
        run_cli("tof", "--config", config_path, "--seed", "4", "--out", b)
        assert (a / "manifest.json").read_text() != (b / "manifest.json").read_text()

    def test_timestamps_flag_breaks_reproducibility_knowingly(
            self, config_path, tmp_path):
        out = tmp_path / "run"
        run_cli("tof", "--config", config_path, "--out", out, "--timestamps")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["timestamps"] is not None

    def test_tampered_event_log_detected(self, config_path, tmp_path):
        out = tmp_path / "run"
        run_cli("tof", "--config", config_path, "--out", out)
        events = out / "events.jsonl"
        events.write_bytes(events.read_bytes() + b'{"event":"forged"}\n')
        assert not check_manifest_integrity(out)

    def test_linear_subcommand_overrides_algorithm(self, config_path, tmp_path):
        out = tmp_path / "run"
        assert run_cli("linear", "--config", config_path, "--out", out) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["algorithm"] == "linear"
        assert manifest["ledger"]["generation_calls"] == 4 * 8

    def test_config_error_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({
            "algorithm": "tof",
            "schedule": {"roots": 0, "depth": 1},
            "prompt": {"text": "", "id": "x"},
        }))
        assert run_cli("tof", "--config", bad, "--out", tmp_path / "o") == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_flag_exits_64(self, config_path, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            run_cli("tof", "--config", config_path, "--badflag")
        assert excinfo.value.code == 64


class TestOracleCommand:
    def test_oracle_runs_and_reports(self, config_path, tmp_path, capsys):
        out = tmp_path / "orc"
        assert run_cli("oracle", "--config", config_path, "--out", out) == 0
        printed = capsys.readouterr().out
        assert "paths_enumerated=" in printed
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["algorithm"] == "oracle"

    def test_over_budget_schedule_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "big.json"
        cfg.write_text(json.dumps({
            "algorithm": "oracle",
            "schedule": {"roots": 8, "depth": 30, "prune_rule": "none",
                         "branch_at": list(range(1, 30))},
            "prompt": {"text": "x", "id": "p"},
        }))
        assert run_cli("oracle", "--config", cfg, "--out", tmp_path / "o") == 2
        assert "bound" in capsys.readouterr().err


class TestBenchAndFit:
    def test_grid_parsing(self):
        assert parse_grid("n=1..4") == [1, 2, 3, 4]
        assert parse_grid("n=1,2,8") == [1, 2, 8]
        with pytest.raises(ConfigError):
            parse_grid("n=3,1")

    def test_bench_emits_requested_point_count(self, config_path, tmp_path):
        out = tmp_path / "bench"
        assert run_cli("bench", "--config", config_path,
                       "--grid", "n=1..16", "--out", out) == 0
        curve = json.loads((out / "curve.json").read_text())
        assert len(curve["points"]) == 16
        assert [p["n"] for p in curve["points"]] == list(range(1, 17))

    def test_bench_table_and_svg_artifacts(self, config_path, tmp_path):
        out = tmp_path / "bench"
        run_cli("bench", "--config", config_path, "--grid", "n=1..4",
                "--out", out, "--format", "table")
        assert (out / "curve.tsv").read_text().startswith("n\tnfe\tbest_score")
        run_cli("bench", "--config", config_path, "--grid", "n=1..4",
                "--out", out, "--format", "svg")
        svg = (out / "curve.svg").read_text()
        assert svg.lstrip().startswith("<?xml")

    def test_fit_recovers_planted_decay(self, tmp_path, capsys):
        curve = {
            "algorithm": "linear",
            "schedule": {},
            "points": [
                {"n": n, "best_score": 80.0 - 5.0 * 0.5**n, "nfe": 10 * n}
                for n in range(1, 9)
            ],
        }
        curve_path = tmp_path / "curve.json"
        curve_path.write_text(json.dumps(curve))
        out = tmp_path / "fit"
        assert run_cli("fit", curve_path, "--out", out, "--format", "svg") == 0
        fit = json.loads((out / "fit.json").read_text())
        assert abs(fit["s_inf"] - 80.0) < 1e-6
        assert abs(fit["amplitude"] - 5.0) < 1e-6
        assert abs(fit["ratio"] - 0.5) < 1e-6
        assert (out / "fit.svg").exists()


class TestWorkerAttachment:
    def test_worker_run_matches_in_process_run(self, config_path, tmp_path):
        in_proc, via_worker = tmp_path / "a", tmp_path / "b"
        assert run_cli("tof", "--config", config_path, "--out", in_proc) == 0
        assert run_cli("tof", "--config", config_path, "--out", via_worker,
                       "--workers", WORKER_CMD) == 0
        a = json.loads((in_proc / "manifest.json").read_text())
        b = json.loads((via_worker / "manifest.json").read_text())
        assert b["transport"]["workers_attached"] == 1
        # Equivalent modulo transport metadata and the endpoint echo.
        for manifest in (a, b):
            manifest.pop("transport")
            manifest["config"].pop("worker_endpoints")
        assert a == b
        assert ((in_proc / "events.jsonl").read_bytes()
                == (via_worker / "events.jsonl").read_bytes())

    def test_protocol_check_subcommand(self, capsys):
        assert run_cli("protocol-check", "--workers", WORKER_CMD) == 0
        assert "ok" in capsys.readouterr().out

    def test_protocol_check_with_transcript(self, capsys):
        assert run_cli("protocol-check", "--workers", WORKER_CMD,
                       "--transcript", DATA / "golden_transcript.jsonl") == 0
        out = capsys.readouterr().out
        assert "transcript" in out and "FAILED" not in out
