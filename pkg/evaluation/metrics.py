#!/usr/bin/env python3
"""
Evaluation metrics: Top-k recall, AUROC and AUPR (average precision).

All functions are pure and operate on numpy arrays. Rankings break score ties
by lower index first.
"""

import logging
import math
from typing import Any, Dict, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator

from core.errors import MetricError

logger = logging.getLogger(__name__)

RECALL_KS = (10, 20, 30)


def _descending_order(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    # stable sort of the negated scores keeps lower indices first among ties
    return np.argsort(-scores, axis=axis, kind="stable")


def topk_recall(scores: np.ndarray, truth: np.ndarray, k: int) -> float:
    """
    Mean over samples of |top-k(scores) ∩ positives| / |positives|.

    Samples without positives are left out of the mean.

    Args:
        scores: (B, N) label scores.
        truth: (B, N) multi-hot labels.
        k: Number of top-ranked labels, 1 <= k <= N.

    Returns:
        Recall in [0, 1].

    Raises:
        MetricError: If k is out of range, shapes differ or no sample has a positive.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.ndim != 2 or scores.shape != truth.shape:
        raise MetricError(f"topk_recall: scores {scores.shape} and labels {truth.shape} must be matching (B, N) arrays")
    n_labels = scores.shape[1]
    if k < 1 or k > n_labels:
        raise MetricError(f"topk_recall: k={k} must be between 1 and the number of labels {n_labels}")
    positives = truth.astype(bool)
    counts = positives.sum(axis=1)
    included = counts > 0
    if not included.any():
        raise MetricError("topk_recall: no sample has a positive label")

    top = _descending_order(scores, axis=1)[:, :k]
    hits = np.take_along_axis(positives, top, axis=1).sum(axis=1)
    return float(np.mean(hits[included] / counts[included]))


def _check_binary(scores: np.ndarray, truth: np.ndarray, name: str):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if scores.shape != truth.shape:
        raise MetricError(f"{name}: {scores.size} scores but {truth.size} labels")
    if not np.isin(truth, (0, 1)).all():
        raise MetricError(f"{name}: labels must be 0 or 1")
    return scores, truth.astype(bool)


def auroc(scores: np.ndarray, truth: np.ndarray) -> float:
    """
    Area under the ROC curve as the Mann-Whitney statistic.

    Each (positive, negative) pair scores 1 when the positive ranks higher,
    0.5 on a tie and 0 otherwise; the result is the pair average.

    Raises:
        MetricError: If only one class is present; the message gives both counts.
    """
    scores, truth = _check_binary(scores, truth, "auroc")
    n_pos = int(truth.sum())
    n_neg = int(truth.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"auroc: needs both classes, got {n_pos} positives and {n_neg} negatives")

    # average ranks (1-based) with ties sharing the mean of their positions
    unique, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    average_rank = ends - (counts - 1) / 2.0
    ranks = average_rank[inverse]
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(scores: np.ndarray, truth: np.ndarray) -> float:
    """
    Average precision: mean of the precision at each rank holding a positive.

    Raises:
        MetricError: If there are no positives.
    """
    scores, truth = _check_binary(scores, truth, "aupr")
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise MetricError("aupr: needs at least one positive label")
    ranked = truth[_descending_order(scores)]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, ranked.size + 1)
    return float(np.sum(hits[ranked] / ranks[ranked]) / n_pos)


class MetricsReport(BaseModel):
    """Evaluation summary for one split."""

    auroc: Optional[float] = Field(None, ge=0.0, le=1.0, description="Area under the ROC curve")
    aupr: Optional[float] = Field(None, ge=0.0, le=1.0, description="Average precision")
    recall_at: Dict[int, Optional[float]] = Field(
        default_factory=dict, description="Top-k recall keyed by k (multilabel tasks only)"
    )
    loss: float = Field(..., ge=0.0, description="Mean cross-entropy loss")
    n_samples: int = Field(..., ge=0, description="Number of evaluated samples")

    @field_validator("recall_at")
    @classmethod
    def _fractions(cls, value: Dict[int, Optional[float]]) -> Dict[int, Optional[float]]:
        for k, recall in value.items():
            if recall is not None and not 0.0 <= recall <= 1.0:
                raise ValueError(f"recall_at[{k}]={recall} is not a fraction")
        return value

    def to_flat_dict(self) -> Dict[str, Any]:
        """Flat JSON object: auroc, aupr, recall_at_10/20/30, loss, n_samples."""
        flat: Dict[str, Any] = {"auroc": self.auroc, "aupr": self.aupr}
        for k in RECALL_KS:
            flat[f"recall_at_{k}"] = self.recall_at.get(k)
        flat["loss"] = self.loss
        flat["n_samples"] = self.n_samples
        return flat

    def selection_score(self, task: str) -> float:
        """
        Model-selection score: AUROC for binary tasks, Recall@30 for multilabel,
        falling back to the negated loss when that metric is undefined.
        """
        value = self.auroc if task == "binary" else self.recall_at.get(30)
        if value is None or math.isnan(value):
            return -self.loss
        return value


def compute_report(
    predictions: np.ndarray,
    truth: np.ndarray,
    loss: float,
    task: str,
    ks: Sequence[int] = RECALL_KS,
) -> MetricsReport:
    """
    Build a MetricsReport from predictions and labels.

    Binary tasks get AUROC/AUPR over samples. Multilabel tasks get Top-k recall
    plus micro-averaged AUROC/AUPR over all (sample, label) pairs. Undefined
    metrics are reported as None with a warning.

    Args:
        predictions: (B,) or (B, N) probabilities.
        truth: Labels of the same shape.
        loss: Mean loss over the evaluated samples.
        task: "binary" or "multilabel".
        ks: Top-k cut-offs for the multilabel task.

    Returns:
        The report.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth)
    recall_at: Dict[int, Optional[float]] = {}
    if task == "multilabel":
        for k in ks:
            try:
                recall_at[k] = topk_recall(predictions, truth, k)
            except MetricError as e:
                logger.warning(f"Recall@{k} undefined: {e}")
                recall_at[k] = None

    try:
        roc = auroc(predictions.reshape(-1), truth.reshape(-1))
    except MetricError as e:
        logger.warning(f"AUROC undefined: {e}")
        roc = None
    try:
        pr = aupr(predictions.reshape(-1), truth.reshape(-1))
    except MetricError as e:
        logger.warning(f"AUPR undefined: {e}")
        pr = None

    return MetricsReport(
        auroc=roc,
        aupr=pr,
        recall_at=recall_at,
        loss=max(float(loss), 0.0),
        n_samples=int(predictions.shape[0]),
    )
