#!/usr/bin/env python3
"""
Tests for the gatefuse command line.
"""

import json
from unittest.mock import patch

import pytest

from cli.fusion_cli import main
from core.testing import tiny_generator_spec
from core.utils import save_json_file
from engine.gradcheck import GradCheckResult
from models.registry import REGISTRY
from training.gradcheck_suite import TOY_DIMS


@pytest.fixture
def workspace(tmp_path):
    spec = tiny_generator_spec(signal={"time_invariant": 1.0, "notes": 1.0}).model_dump()
    save_json_file(spec, tmp_path / "spec.json")
    config = dict(TOY_DIMS, model_name="BertLstm", epochs=1, batch_size=8, learning_rate=1e-2)
    save_json_file(config, tmp_path / "config.json")
    return tmp_path


def _stderr_payload(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


class TestUsage:
    """Tests for argument handling."""

    def test_no_command(self, capsys):
        assert main([]) == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as info:
            main(["fit"])
        assert info.value.code == 2

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["train", "--config", "c.json"])
        assert info.value.code == 2


class TestCommands:
    """Tests for each subcommand."""

    def test_list_models(self, capsys):
        assert main(["list-models"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2 + len(REGISTRY)
        assert lines[2].split()[0] == "Ti"
        assert any(line.startswith("BertEncoder[AT]") for line in lines)

    def test_generate(self, workspace, capsys):
        out = workspace / "data.jsonl"
        assert main(["generate", "--spec", str(workspace / "spec.json"), "--out", str(out), "--seed", "3"]) == 0
        assert json.loads(capsys.readouterr().out) == {"out": str(out), "n_samples": 24}
        header = json.loads(out.read_text(encoding="utf-8").splitlines()[0])
        assert header["n_samples"] == 24

    def test_generate_invalid_spec(self, workspace, capsys):
        save_json_file({"n_samples": 5}, workspace / "bad.json")
        assert main(["generate", "--spec", str(workspace / "bad.json"), "--out", str(workspace / "d.jsonl")]) == 1
        assert _stderr_payload(capsys)["error"] == "ConfigError"

    def test_train_then_evaluate(self, workspace, capsys):
        data = workspace / "data.jsonl"
        run = workspace / "run"
        assert main(["generate", "--spec", str(workspace / "spec.json"), "--out", str(data)]) == 0
        assert main(["train", "--config", str(workspace / "config.json"), "--data", str(data), "--out", str(run)]) == 0
        trained = json.loads(capsys.readouterr().out.strip().splitlines()[-1])

        assert main(["evaluate", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(data)]) == 0
        evaluated = json.loads(capsys.readouterr().out)
        assert evaluated == trained["test"]

        assert main(["evaluate", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(data), "--split", "valid"]) == 0
        assert json.loads(capsys.readouterr().out)["n_samples"] == 4

    def test_evaluate_missing_checkpoint(self, workspace, capsys):
        data = workspace / "data.jsonl"
        main(["generate", "--spec", str(workspace / "spec.json"), "--out", str(data)])
        capsys.readouterr()
        assert main(["evaluate", "--checkpoint", str(workspace / "none.bin"), "--data", str(data)]) == 1
        assert _stderr_payload(capsys)["error"] == "CheckpointError"

    def test_train_missing_data(self, workspace, capsys):
        code = main(["train", "--config", str(workspace / "config.json"), "--data", str(workspace / "x.jsonl"), "--out", str(workspace / "r")])
        assert code == 1
        assert _stderr_payload(capsys)["error"] == "DataError"

    def test_empty_test_split(self, workspace, capsys):
        """A three-sample set trains with a null test report; evaluating its test split fails cleanly."""
        save_json_file(tiny_generator_spec(n_samples=3).model_dump(), workspace / "small.json")
        data = workspace / "small.jsonl"
        run = workspace / "small_run"
        assert main(["generate", "--spec", str(workspace / "small.json"), "--out", str(data)]) == 0
        assert main(["train", "--config", str(workspace / "config.json"), "--data", str(data), "--out", str(run)]) == 0
        assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["test"] is None

        assert main(["evaluate", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(data)]) == 1
        assert _stderr_payload(capsys)["error"] == "DataError"

    def test_compare(self, workspace, capsys):
        data = workspace / "data.jsonl"
        main(["generate", "--spec", str(workspace / "spec.json"), "--out", str(data)])
        capsys.readouterr()
        code = main(["compare", "--config", str(workspace / "config.json"), "--data", str(data),
                     "--out", str(workspace / "cmp"), "--models", "Ti, BertLstm[TF]"])
        assert code == 0
        records = [json.loads(line) for line in capsys.readouterr().out.strip().splitlines()]
        assert [r["model"] for r in records] == ["Ti", "BertLstm[TF]"]
        assert (workspace / "cmp" / "BertLstm_TF" / "checkpoint.bin").exists()

    @pytest.mark.parametrize("errors, expected", [((1e-7, 2e-6), 0), ((1e-7, 3e-3), 1)])
    def test_gradcheck_exit_code(self, errors, expected, capsys):
        results = [GradCheckResult(name=f"case{i}", max_relative_error=e, tolerance=1e-4) for i, e in enumerate(errors)]
        with patch("cli.fusion_cli.run_suite", return_value=results) as run_suite:
            assert main(["gradcheck", "--tolerance", "1e-4"]) == expected
        run_suite.assert_called_once_with(tolerance=1e-4)
        assert "passed" in capsys.readouterr().out
