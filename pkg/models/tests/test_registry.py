#!/usr/bin/env python3
"""
Tests for the model registry and model assembly.
"""

import numpy as np
import pytest

from core.errors import ConfigError
from core.testing import tiny_generator_spec
from dataset.batching import make_batch
from dataset.generator import generate
from engine.nn import count_parameters
from models.registry import REGISTRY, build_model, list_models, main_modality_of, resolve_spec
from training.config import ModelConfig
from training.gradcheck_suite import TOY_DIMS, toy_dataset


@pytest.fixture(scope="module")
def binary_data():
    return toy_dataset()


@pytest.fixture(scope="module")
def multilabel_data():
    return generate(tiny_generator_spec(n_samples=4, task="multilabel", n_labels=5, signal={"notes": 1.0}))


def _model(name, dataset, **overrides):
    fields = dict(TOY_DIMS)
    fields.update(overrides)
    if dataset.header.task == "multilabel":
        fields["task"] = "diagnoses_multilabel"
    config = ModelConfig(model_name=name, **fields).bind_dataset(dataset.header)
    return build_model(config), config


class TestRegistry:
    """Tests for registry contents."""

    def test_size(self):
        """Two single-modality baselines, four series models, four early fusions, 24 three-modality models."""
        assert len(REGISTRY) == 34
        assert list_models()[:2] == ["Ti", "Bert"]

    @pytest.mark.parametrize(
        "name, fusion, main",
        [
            ("LstmBert", "attention_gate", "time_series"),
            ("BertLstm", "attention_gate", "notes"),
            ("BertEncoder[AT]", "attention", "notes"),
            ("StarBert[TF]", "tensor", "time_series"),
            ("F-Cnn", "early", None),
            ("Star", "none", None),
        ],
    )
    def test_entries(self, name, fusion, main):
        spec = resolve_spec(name)
        assert spec.fusion == fusion
        assert spec.main == main
        assert main_modality_of(name) == main

    def test_unknown_name_lists_valid_names(self):
        with pytest.raises(ConfigError, match="LstmBert"):
            resolve_spec("GruBert")


class TestFusionModel:
    """Tests for FusionModel assembly and forward passes."""

    @pytest.mark.parametrize("name", list(REGISTRY))
    def test_binary_forward(self, name, binary_data):
        """Every registry model yields one probability per sample."""
        model, config = _model(name, binary_data)
        batch_ = make_batch(binary_data.samples, "binary", 1)
        pred, loss = model.eval().loss(batch_)
        assert pred.shape == (len(binary_data),)
        assert ((pred.data > 0) & (pred.data < 1)).all()
        assert np.isfinite(loss.item())

    @pytest.mark.parametrize("name", ["BertLstm", "LstmBert[TF]", "CnnBert[AT]", "Bert"])
    def test_multilabel_forward(self, name, multilabel_data):
        """Multilabel predictions are per-row distributions over the label space."""
        model, _ = _model(name, multilabel_data)
        batch_ = make_batch(multilabel_data.samples, "multilabel", 5)
        pred = model.eval()(batch_)
        assert pred.shape == (4, 5)
        np.testing.assert_allclose(pred.data.sum(axis=1), np.ones(4))

    def test_representation_width_follows_main(self, binary_data):
        """The gated representation has the main modality's width."""
        notes_main, config = _model("BertLstm", binary_data)
        series_main, _ = _model("LstmBert", binary_data)
        assert notes_main.representation_dim == config.text_width
        assert series_main.representation_dim == config.ts_out

    def test_same_seed_same_parameters(self, binary_data):
        a, _ = _model("StarBert", binary_data, seed=3)
        b, _ = _model("StarBert", binary_data, seed=3)
        c, _ = _model("StarBert", binary_data, seed=4)
        for name, value in a.state_arrays().items():
            np.testing.assert_array_equal(value, b.state_arrays()[name])
        assert any(not np.array_equal(v, c.state_arrays()[k]) for k, v in a.state_arrays().items())

    def test_unbound_config(self):
        """Models cannot be built before the config knows the input dimensions."""
        with pytest.raises(ConfigError, match="bind"):
            build_model(ModelConfig(model_name="Ti"))

    def test_gate_adds_few_parameters(self, binary_data):
        """The gate costs a small number of parameters over its encoders."""
        gated, config = _model("LstmBert", binary_data)
        gate_params = count_parameters(gated.fusion)
        main_dim, ti_dim, aux_dim = config.ts_out, config.ti_dim, config.text_width
        assert gate_params == (main_dim + ti_dim + 1) + (main_dim + aux_dim + 1) + (ti_dim + aux_dim + 1) * main_dim + 1
