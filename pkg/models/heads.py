#!/usr/bin/env python3
"""
Prediction heads and the cross-entropy training objective.
"""

import logging

import numpy as np

from core.errors import ShapeError
from engine import ops
from engine.nn import Linear
from engine.tensor import Tensor

logger = logging.getLogger(__name__)

# Predictions are clamped into [PROB_FLOOR, 1 - PROB_FLOOR] before taking logs.
PROB_FLOOR = 1e-12


def predict_multilabel(m: Tensor, head: Linear) -> Tensor:
    """
    Softmax over the label axis; each row of the result sums to one.

    Raises:
        ShapeError: If ``m`` does not match the head's input width.
    """
    if m.ndim != 2 or m.shape[1] != head.in_features:
        raise ShapeError("predict_multilabel", [m.shape, head.weight.shape])
    return ops.softmax(head(m))


def predict_binary(m: Tensor, head: Linear) -> Tensor:
    """
    Sigmoid of a single logit per row, returned as a (B,) vector.

    Raises:
        ShapeError: If the head does not map to one output or widths disagree.
    """
    if m.ndim != 2 or m.shape[1] != head.in_features or head.out_features != 1:
        raise ShapeError("predict_binary", [m.shape, head.weight.shape], "head must map to one logit")
    return ops.reshape(ops.sigmoid(head(m)), (m.shape[0],))


def _clamp(pred: Tensor) -> Tensor:
    # lower clamp by relu shift; upper clamp by scalar_min
    floor = ops.add(ops.relu(ops.add(pred, -PROB_FLOOR)), PROB_FLOOR)
    return ops.scalar_min(floor, 1.0 - PROB_FLOOR)


def bce_loss(pred: Tensor, truth: np.ndarray) -> Tensor:
    """
    Cross-entropy between predictions and 0/1 targets.

    For a (B, N) prediction the per-row terms are summed over labels; for a (B,)
    prediction each row contributes one term. The result is the negated batch mean.

    Args:
        pred: Probabilities, (B,) or (B, N).
        truth: 0/1 array with the same shape.

    Returns:
        Scalar loss tensor.

    Raises:
        ShapeError: If shapes differ or the batch is empty.
    """
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != pred.shape or pred.ndim not in (1, 2) or pred.shape[0] == 0:
        raise ShapeError("bce_loss", [pred.shape, truth.shape])
    clamped = _clamp(pred)
    positive = ops.mul(ops.log(clamped), truth)
    negative = ops.mul(ops.log(ops.add(ops.scale(clamped, -1.0), 1.0)), 1.0 - truth)
    per_entry = ops.add(positive, negative)
    return ops.scale(ops.sum_all(per_entry), -1.0 / pred.shape[0])
