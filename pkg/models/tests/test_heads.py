#!/usr/bin/env python3
"""
Tests for the prediction heads and the loss.
"""

import math

import numpy as np
import pytest

from core.errors import ShapeError
from engine.gradcheck import grad_check
from engine.nn import Linear
from engine.tensor import Tensor
from models.heads import PROB_FLOOR, bce_loss, predict_binary, predict_multilabel


class TestHeads:
    """Tests for predict_multilabel and predict_binary."""

    def test_multilabel_rows_sum_to_one(self):
        head = Linear(4, 6, np.random.default_rng(0))
        probs = predict_multilabel(Tensor(np.random.default_rng(1).normal(size=(3, 4))), head)
        assert probs.shape == (3, 6)
        np.testing.assert_allclose(probs.data.sum(axis=1), np.ones(3))

    def test_binary_shape_and_range(self):
        head = Linear(4, 1, np.random.default_rng(0))
        probs = predict_binary(Tensor(np.random.default_rng(1).normal(size=(5, 4))), head)
        assert probs.shape == (5,)
        assert ((probs.data > 0) & (probs.data < 1)).all()

    def test_binary_needs_single_output(self):
        head = Linear(4, 2, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            predict_binary(Tensor(np.zeros((2, 4))), head)

    def test_width_mismatch(self):
        head = Linear(4, 3, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            predict_multilabel(Tensor(np.zeros((2, 5))), head)


class TestBceLoss:
    """Tests for the cross-entropy objective."""

    def test_binary_value(self):
        """Loss is the negated mean log-likelihood."""
        pred = Tensor([0.8, 0.4])
        loss = bce_loss(pred, np.array([1.0, 0.0])).item()
        assert loss == pytest.approx(-(math.log(0.8) + math.log(0.6)) / 2)

    def test_multilabel_sums_over_labels(self):
        """Per-row terms are summed over labels before averaging over rows."""
        pred = Tensor([[0.5, 0.25], [0.9, 0.1]])
        truth = np.array([[1.0, 0.0], [0.0, 1.0]])
        expected = -(math.log(0.5) + math.log(0.75) + math.log(0.1) + math.log(0.1)) / 2
        assert bce_loss(pred, truth).item() == pytest.approx(expected)

    def test_saturated_predictions_stay_finite(self):
        """Predictions of exactly 0 or 1 are clamped before the log."""
        loss = bce_loss(Tensor([0.0, 1.0]), np.array([1.0, 0.0])).item()
        assert math.isfinite(loss)
        assert loss == pytest.approx(-math.log(PROB_FLOOR), rel=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bce_loss(Tensor([0.5, 0.5]), np.array([1.0, 0.0, 1.0]))

    def test_empty_batch(self):
        with pytest.raises(ShapeError):
            bce_loss(Tensor(np.zeros((0,))), np.zeros((0,)))

    def test_gradients(self):
        head = Linear(3, 1, np.random.default_rng(0))
        m = Tensor(np.random.default_rng(1).normal(size=(4, 3)))
        truth = np.array([1.0, 0.0, 0.0, 1.0])
        error = grad_check(lambda x, w, b: bce_loss(predict_binary(x, head), truth), [m, head.weight, head.bias])
        assert error < 1e-4
