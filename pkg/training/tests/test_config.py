#!/usr/bin/env python3
"""
Tests for model configuration.
"""

import pytest

from core.errors import ConfigError
from core.testing import temp_json_file
from dataset.io import DatasetHeader
from training.config import ModelConfig, load_config, parse_config

HEADER = DatasetHeader(task="binary", d1=4, l=5, d2=3, d3_max=8, vocab=40, n_labels=1, n_samples=10)


class TestModelConfig:
    """Tests for ModelConfig validation."""

    def test_registry_fills_fusion_and_main(self):
        config = ModelConfig(model_name="BertCnn[AT]")
        assert config.fusion == "attention"
        assert config.main == "notes"
        assert config.label_task == "binary"

    def test_explicit_values_must_agree(self):
        with pytest.raises(ConfigError, match="fusion"):
            parse_config({"model_name": "LstmBert", "fusion": "tensor"})
        with pytest.raises(ConfigError, match="main modality"):
            parse_config({"model_name": "LstmBert", "main": "notes"})

    def test_unknown_model(self):
        with pytest.raises(ConfigError, match="Unknown model"):
            parse_config({"model_name": "Resnet"})

    def test_unknown_field(self):
        with pytest.raises(ConfigError):
            parse_config({"model_name": "Ti", "learning_rat": 0.1})

    @pytest.mark.parametrize("field, value", [("dropout", 1.0), ("epochs", -1), ("batch_size", 0), ("grad_clip", 0.0)])
    def test_out_of_range(self, field, value):
        with pytest.raises(ConfigError):
            parse_config({"model_name": "Ti", field: value})

    def test_overrides_skip_none(self):
        config = parse_config({"model_name": "Ti", "seed": 4}, seed=None, epochs=2)
        assert config.seed == 4
        assert config.epochs == 2


class TestBindDataset:
    """Tests for binding dataset dimensions."""

    def test_fills_dimensions(self):
        config = ModelConfig(model_name="LstmBert").bind_dataset(HEADER)
        assert (config.d1, config.l, config.d2, config.vocab, config.n_labels) == (4, 5, 3, 40, 1)

    def test_rebinding_same_dataset(self):
        config = ModelConfig(model_name="Ti").bind_dataset(HEADER)
        assert config.bind_dataset(HEADER) == config

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError, match="d1"):
            ModelConfig(model_name="Ti", d1=9).bind_dataset(HEADER)

    def test_task_mismatch(self):
        with pytest.raises(ConfigError, match="task"):
            ModelConfig(model_name="Ti", task="diagnoses_multilabel").bind_dataset(HEADER)

    def test_notes_longer_than_positions(self):
        with pytest.raises(ConfigError, match="max_positions"):
            ModelConfig(model_name="Bert", max_positions=4).bind_dataset(HEADER)


class TestLoadConfig:
    """Tests for load_config."""

    def test_load_with_seed_override(self):
        with temp_json_file({"model_name": "F-Lstm", "seed": 1}) as path:
            config = load_config(path, seed=9)
        assert config.seed == 9
        assert config.fusion == "early"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="Cannot load"):
            load_config(tmp_path / "absent.json")
