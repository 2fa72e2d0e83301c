import json
import subprocess
import sys

import numpy as np
import pytest

from biomuse.cli import build_parser, eval_tonal, eval_vitals, main


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "biomuse.cli", *args], capture_output=True, text=True
    )


class TestSubcommands:
    def test_every_subcommand_has_help(self):
        for cmd in (
            "simulate",
            "vitals",
            "plan",
            "generate",
            "render",
            "classify",
            "session",
            "serve",
            "eval-tonal",
            "eval-vitals",
        ):
            r = run_cli(cmd, "--help")
            assert r.returncode == 0, cmd
            assert "usage" in r.stdout.lower()

    def test_unknown_flag_exits_2(self):
        r = run_cli("plan", "--hr", "70", "--rr", "14", "--bogus-flag", "1")
        assert r.returncode == 2

    def test_operational_error_exits_1(self, tmp_path):
        r = run_cli("classify", "--in", str(tmp_path / "nope.json"))
        assert r.returncode == 1
        assert "error" in r.stderr.lower()

    def test_plan_anchor_low_state(self):
        r = run_cli("plan", "--hr", "58", "--rr", "9", "--time", "22:00", "--status", "resting")
        assert r.returncode == 0
        payload = json.loads(r.stdout)
        assert payload["mode"] == "Gong"
        assert payload["tempo_bpm"] <= 70
        assert payload["genre_mood"] == "ambient"

    def test_pipeline_composition(self, tmp_path):
        trace = tmp_path / "t.csv"
        r = run_cli(
            "simulate", "--hr", "72", "--rr", "15", "--duration", "60", "--seed", "1",
            "--out", str(trace),
        )
        assert r.returncode == 0
        r = run_cli("vitals", "--in", str(trace), "--window", "30", "--hop", "10")
        assert r.returncode == 0
        rows = [json.loads(line) for line in r.stdout.splitlines()]
        assert rows and abs(rows[0]["hr_bpm"] - 72.0) < 1.0
        # feed the tracked rates into the planner
        r = run_cli("plan", "--hr", str(rows[0]["hr_bpm"]), "--rr", str(rows[0]["rr_rpm"]))
        assert r.returncode == 0 and json.loads(r.stdout)["tempo_bpm"] > 0

    def test_generate_classify_render(self, tmp_path):
        melody = tmp_path / "m.json"
        r = run_cli(
            "generate", "--mode", "Yu", "--tonic", "9", "--bars", "4",
            "--seed", "5", "--out", str(melody),
        )
        assert r.returncode == 0
        r = run_cli("classify", "--in", str(melody))
        result = json.loads(r.stdout)
        assert result["mode"] == "Yu" and result["tonic_pc"] == 9

        wav = tmp_path / "m.wav"
        r = run_cli("render", "--in", str(melody), "--out", str(wav), "--instrument", "erhu")
        assert r.returncode == 0
        assert wav.read_bytes()[:4] == b"RIFF"

    def test_seed_determinism(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run_cli("generate", "--mode", "Gong", "--seed", "7", "--out", str(a))
        run_cli("generate", "--mode", "Gong", "--seed", "7", "--out", str(b))
        assert a.read_text() == b.read_text()

    def test_session_subcommand_logs_jsonl(self, tmp_path):
        log = tmp_path / "ev.jsonl"
        r = run_cli(
            "session", "--duration", "40", "--script", "20,60,15;20,95,22",
            "--seed", "2", "--out", str(log),
        )
        assert r.returncode == 0
        lines = [json.loads(line) for line in log.read_text().splitlines()]
        assert lines[0]["kind"] == "session_start"
        assert all(ev["v"] == 1 for ev in lines)


class TestEvalTonal:
    def test_reports_shape_and_invariants(self):
        reports = eval_tonal(100, seed=1)
        assert [r.condition for r in reports] == ["embedded", "soft_label", "unconditioned"]
        for r in reports:
            assert r.n == 100
            total = sum(sum(row.values()) for row in r.confusion.values())
            assert total == r.n
            correct = sum(r.confusion[m][m] for m in r.confusion)
            assert r.accuracy == pytest.approx(correct / r.n)

    def test_ordering_holds_at_small_n(self):
        reports = eval_tonal(150, seed=2)
        acc = {r.condition: r.accuracy for r in reports}
        assert acc["embedded"] > acc["soft_label"] > acc["unconditioned"]

    def test_minimum_n(self):
        with pytest.raises(ValueError):
            eval_tonal(50)


class TestEvalVitals:
    def test_clean_grid_tight(self):
        result = eval_vitals(snr_list=(None,), seed=1)
        assert result["summary"]["clean"]["max_hr_err_bpm"] <= 1.0
        assert result["summary"]["clean"]["max_rr_err_rpm"] <= 0.5

    def test_deterministic(self):
        a = eval_vitals(rate_grid=[(0.25, 1.2)], snr_list=(0.0,), seed=3)
        b = eval_vitals(rate_grid=[(0.25, 1.2)], snr_list=(0.0,), seed=3)
        assert a == b


def test_main_returns_zero(tmp_path):
    out = tmp_path / "trace.csv"
    assert main(["simulate", "--duration", "30", "--out", str(out)]) == 0
    assert out.exists()
