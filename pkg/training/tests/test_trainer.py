#!/usr/bin/env python3
"""
Tests for the training loop, evaluation and comparison.
"""

import json
import math
from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from core.errors import ConfigError, DataError, DivergenceError
from core.testing import temp_env_vars, tiny_generator_spec
from core.utils import read_json_lines
from dataset.batching import make_batch, split
from dataset.generator import generate
from engine.tensor import Tensor
from models.registry import build_model
from training.config import ModelConfig
from training.gradcheck_suite import TOY_DIMS
from training.optimizer import AdamState
from training.trainer import (
    CHECKPOINT_FILE,
    COMPARE_FILE,
    CONFIG_FILE,
    HISTORY_FILE,
    TEST_METRICS_FILE,
    compare,
    evaluate_checkpoint,
    load_model,
    predict,
    train,
    train_step,
)


@pytest.fixture(scope="module")
def dataset():
    return generate(tiny_generator_spec(signal={"time_invariant": 1.0, "time_series": 1.0, "notes": 1.0}))


def _config(name="LstmBert", **overrides):
    fields = dict(TOY_DIMS, epochs=2, batch_size=8, learning_rate=1e-2, seed=1)
    fields.update(overrides)
    return ModelConfig(model_name=name, **fields)


class TestTrainStep:
    """Tests for a single optimization step."""

    def test_repeated_steps_reduce_loss(self, dataset):
        config = _config("Ti").bind_dataset(dataset.header)
        model = build_model(config)
        batch_ = make_batch(dataset.samples[:8], "binary", 1)
        state = AdamState(lr=1e-2)
        losses = [train_step(model, batch_, state, config, 1) for _ in range(40)]
        assert losses[-1] < losses[0]
        assert state.step == 40

    def test_non_finite_loss_raises(self, dataset):
        config = _config("Ti").bind_dataset(dataset.header)
        model = MagicMock()
        model.loss.return_value = (Tensor([0.5]), Tensor(math.nan))
        with pytest.raises(DivergenceError) as info:
            train_step(model, make_batch(dataset.samples[:2], "binary", 1), AdamState(), config, 3)
        assert info.value.epoch == 3


class TestTrain:
    """Tests for train and the run directory."""

    def test_run_directory(self, dataset, tmp_path):
        result = train(_config(), dataset, tmp_path / "run")
        run = tmp_path / "run"
        for name in (CHECKPOINT_FILE, HISTORY_FILE, CONFIG_FILE, TEST_METRICS_FILE):
            assert (run / name).exists()

        history = list(read_json_lines(run / HISTORY_FILE))
        assert [record["epoch"] for record in history] == [0, 1, 2]
        assert history == result.history
        assert 0 <= result.best_epoch <= 2
        assert json.loads((run / CONFIG_FILE).read_text())["d1"] == dataset.header.d1
        assert json.loads((run / TEST_METRICS_FILE).read_text()) == result.test_report.to_flat_dict()
        assert result.test_report.n_samples == len(split(dataset.samples, 1)[2])

    def test_deterministic(self, dataset, tmp_path):
        a = train(_config(), dataset, tmp_path / "a")
        b = train(_config(), dataset, tmp_path / "b")
        assert a.history == b.history
        assert (tmp_path / "a" / CHECKPOINT_FILE).read_bytes() == (tmp_path / "b" / CHECKPOINT_FILE).read_bytes()

    def test_evaluate_checkpoint_reproduces_test_report(self, dataset, tmp_path):
        result = train(_config("BertStar[TF]"), dataset, tmp_path)
        report = evaluate_checkpoint(tmp_path / CHECKPOINT_FILE, dataset, "test")
        assert report == result.test_report

    def test_zero_epochs_keeps_initial_model(self, dataset, tmp_path):
        result = train(_config("Ti", epochs=0), dataset, tmp_path)
        assert result.best_epoch == 0
        assert len(result.history) == 1

    def test_zero_learning_rate_freezes_weights(self, dataset, tmp_path):
        """With lr=0 every epoch reports the epoch-0 validation metrics, and so does the checkpoint."""
        result = train(_config("LstmBert", learning_rate=0.0, epochs=3), dataset, tmp_path)
        first = result.history[0]["valid"]
        assert all(record["valid"] == first for record in result.history)
        assert result.best_epoch == 0
        assert evaluate_checkpoint(tmp_path / CHECKPOINT_FILE, dataset, "valid").to_flat_dict() == first

    def test_empty_test_split_skips_test_report(self, tmp_path):
        """Three samples split 2/1/0: training completes without a test report."""
        tiny = generate(tiny_generator_spec(n_samples=3))
        result = train(_config("Ti", epochs=1), tiny, tmp_path)
        assert result.test_report is None
        assert len(result.history) == 2
        assert (tmp_path / CHECKPOINT_FILE).exists()
        assert not (tmp_path / TEST_METRICS_FILE).exists()
        with pytest.raises(DataError):
            evaluate_checkpoint(tmp_path / CHECKPOINT_FILE, tiny, "test")

    def test_task_mismatch(self, dataset, tmp_path):
        with pytest.raises(ConfigError):
            train(_config("Ti", task="diagnoses_multilabel"), dataset, tmp_path)

    def test_divergence_names_last_checkpoint(self, dataset, tmp_path):
        with patch("training.trainer.train_step", side_effect=DivergenceError(1, None)):
            with pytest.raises(DivergenceError) as info:
                train(_config("Ti"), dataset, tmp_path)
        assert info.value.epoch == 1
        assert info.value.last_checkpoint.endswith(CHECKPOINT_FILE)
        assert (tmp_path / CHECKPOINT_FILE).exists()


class TestPredict:
    """Tests for batched prediction."""

    def test_threads_do_not_change_results(self, dataset):
        config = _config("CnnBert[AT]").bind_dataset(dataset.header)
        model = build_model(config)
        serial = predict(model, dataset.samples, config)
        with temp_env_vars(FUSION_NUM_THREADS="3"):
            threaded = predict(model, dataset.samples, config)
        np.testing.assert_array_equal(serial[0], threaded[0])
        np.testing.assert_array_equal(serial[1], threaded[1])
        assert serial[2] == threaded[2]

    def test_empty_samples(self, dataset):
        config = _config("Ti").bind_dataset(dataset.header)
        with pytest.raises(DataError):
            predict(build_model(config), [], config)

    def test_load_model(self, dataset, tmp_path):
        train(_config("F-Star", epochs=1), dataset, tmp_path)
        model, config = load_model(tmp_path / CHECKPOINT_FILE)
        assert config.model_name == "F-Star"
        assert model.spec.fusion == "early"


class TestCompare:
    """Tests for compare."""

    def test_one_record_per_model(self, dataset, tmp_path):
        records = compare(["Ti", "LstmBert"], _config("Ti", epochs=1), dataset, tmp_path)
        assert [r["model"] for r in records] == ["Ti", "LstmBert"]
        assert list(read_json_lines(tmp_path / COMPARE_FILE)) == records
        assert (tmp_path / "LstmBert" / CHECKPOINT_FILE).exists()
