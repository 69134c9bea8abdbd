import json
import subprocess
import sys

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from ocr_agent.cli import CliConfig, main, read_predictions, resolve_config
from ocr_agent.errors import ConfigError

from conftest import read_jsonl


class TestPrecedence:
    @settings(max_examples=200)
    @given(st.one_of(st.none(), st.integers(0, 9)), st.one_of(st.none(), st.integers(0, 9)),
           st.one_of(st.none(), st.integers(0, 9)))
    def test_flag_env_file_default(self, flag, env, file):
        env_map = {} if env is None else {"OCR_AGENT_MAX_ITERATIONS": str(env)}
        file_map = {} if file is None else {"max_iterations": file}
        cfg = resolve_config({"max_iterations": flag}, env_map, file_map)
        expected = next((v for v in (flag, env, file) if v is not None), None)
        assert cfg.max_iterations == expected  # None means "the mode's default"
        assert cfg.agent_config().max_iterations == (3 if expected is None else expected)

    def test_string_and_bool_layers(self):
        cfg = resolve_config({"mode": None}, {"OCR_AGENT_MODE": "memory_only", "OCR_AGENT_STRICT": "no"},
                             {"mode": "naive", "tau": 0.3})
        assert cfg.mode == "memory_only" and cfg.strict is False and cfg.tau == 0.3

    @pytest.mark.parametrize("flags,env,file", [
        ({}, {}, {"colour": 1}),
        ({"mode": "bogus"}, {}, {}),
        ({}, {"OCR_AGENT_TAU": "abc"}, {}),
        ({}, {"OCR_AGENT_STRICT": "maybe"}, {}),
        ({"tau": 1.0}, {}, {}),
        ({"mode": "naive", "max_iterations": 3}, {}, {}),
        ({"backend": "grpc"}, {}, {}),
    ])
    def test_invalid(self, flags, env, file):
        with pytest.raises(ConfigError):
            resolve_config(flags, env, file)

    def test_snapshot_hides_key(self):
        assert "api_key" not in CliConfig(api_key="secret").snapshot()


def cli(*argv):
    return main([str(a) for a in argv])


class TestRun:
    def test_mock_run_and_report(self, en_dataset, tmp_path, capsys):
        out = tmp_path / "run"
        assert cli("run", "--dataset", en_dataset, "--out", out, "--backend", "mock") == 0
        text = capsys.readouterr().out
        assert "Capability & Memory" in text and "Average" in text
        snap = yaml.safe_load((out / "config.yaml").read_text())
        assert snap["mode"] == "full" and "api_key" not in snap
        captured = read_jsonl(out / "captured.jsonl")
        assert len(captured) == 5 * 7

        assert cli("report", out, "--format", "json") == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["average"] == pytest.approx(100.0)
        assert cli("report", out, "--curves") == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("Iteration") and len(lines) == 2 + 4

    def test_config_file_and_env(self, en_dataset, tmp_path, monkeypatch, capsys):
        conf = tmp_path / "c.yaml"
        conf.write_text(yaml.safe_dump({"dataset": str(en_dataset), "backend": "mock", "mode": "naive"}))
        monkeypatch.setenv("OCR_AGENT_OUT", str(tmp_path / "env-out"))
        assert cli("run", "--config", conf) == 0
        assert yaml.safe_load((tmp_path / "env-out" / "config.yaml").read_text())["mode"] == "naive"
        capsys.readouterr()
        assert cli("report", tmp_path / "env-out", "--curves") == 1
        assert "no iteration curve" in capsys.readouterr().err

    def test_compare(self, en_dataset, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        cli("run", "--dataset", en_dataset, "--out", a, "--backend", "mock", "--mode", "naive")
        cli("run", "--dataset", en_dataset, "--out", b, "--backend", "mock")
        capsys.readouterr()
        assert cli("report", a, "--compare", b, "--format", "csv") == 0
        out = capsys.readouterr().out.splitlines()
        assert out[1].startswith("Capability & Memory - Naive")

    @pytest.mark.parametrize("argv", [
        ["run", "--mode", "bogus"],
        ["run", "--max-iterations", "x"],
        ["frobnicate"],
        [],
    ])
    def test_usage_errors(self, argv):
        assert cli(*argv) == 2

    def test_missing_out_is_usage(self, en_dataset, monkeypatch):
        monkeypatch.delenv("OCR_AGENT_OUT", raising=False)
        assert cli("run", "--dataset", en_dataset, "--backend", "mock") == 2

    def test_bad_dataset_is_runtime(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{nope\n")
        assert cli("run", "--dataset", bad, "--out", tmp_path / "o", "--backend", "mock") == 1

    def test_report_missing_dir(self, tmp_path):
        assert cli("report", tmp_path / "nothing") == 1


class TestValidateAndScore:
    def test_validate(self, en_dataset, tmp_path, capsys):
        assert cli("validate", en_dataset) == 0
        assert "5 sample(s), 0 errors" in capsys.readouterr().out
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": 1}\n')
        assert cli("validate", bad) == 1
        assert "line 1" in capsys.readouterr().out

    def test_score(self, en_dataset, tmp_path, capsys):
        preds = tmp_path / "p.jsonl"
        preds.write_text("\n".join(json.dumps(x) for x in [
            {"id": "en-rec-1", "answer": "EXIT"}, {"sample_id": "en-cnt-1", "answer": "8"},
            {"id": "ghost", "answer": "x"}]) + "\n")
        assert cli("score", "--dataset", en_dataset, "--predictions", preds, "--format", "json") == 0
        captured = capsys.readouterr()
        payload = json.loads(captured.out)
        assert payload["values"] == {"recognition": 100.0, "counting": pytest.approx(80.0)}
        assert payload["coverage"] == 2
        assert "ghost" in captured.err

    def test_score_empty_predictions(self, en_dataset, tmp_path, capsys):
        preds = tmp_path / "p.json"
        preds.write_text("")
        assert cli("score", "--dataset", en_dataset, "--predictions", preds) == 0
        assert "empty" in capsys.readouterr().err

    def test_read_predictions_map(self, tmp_path):
        p = tmp_path / "p.json"
        p.write_text(json.dumps({"a": "1", "b": None}))
        assert read_predictions(p) == {"a": "1", "b": ""}


def test_console_entry_point(en_dataset):
    proc = subprocess.run([sys.executable, "-m", "ocr_agent.cli", "validate", str(en_dataset)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "0 errors" in proc.stdout
