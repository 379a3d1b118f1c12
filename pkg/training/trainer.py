#!/usr/bin/env python3
"""
Training loop, evaluation and model comparison.

A run directory holds:

- config.json: the dataset-bound ModelConfig
- checkpoint.bin: parameters of the best epoch on the validation split
- history.jsonl: one record per epoch, starting with epoch 0 before any update
- test_metrics.json: the test-split report of the best checkpoint, absent when
  the test split is empty
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import DataError, DivergenceError
from core.utils import append_json_line, get_num_threads, save_json_file, write_json_lines
from dataset.batching import SampleBatch, batch, select_split, split
from dataset.io import Dataset, Sample
from engine.nn import count_parameters
from engine.rng import RngState
from engine.tensor import backward, no_grad, reset_graph
from evaluation.metrics import MetricsReport, compute_report
from models.checkpoint import load_into, read_checkpoint, save_checkpoint
from models.registry import FusionModel, build_model
from training.config import ModelConfig, parse_config
from training.optimizer import AdamState, adam_step, clip_grad_norm

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.bin"
HISTORY_FILE = "history.jsonl"
CONFIG_FILE = "config.json"
TEST_METRICS_FILE = "test_metrics.json"
COMPARE_FILE = "compare.jsonl"

SHUFFLE_STREAM = 3


@dataclass
class TrainingResult:
    """Outcome of one training run."""

    config: ModelConfig
    history: List[Dict[str, Any]] = field(default_factory=list)
    best_epoch: int = 0
    test_report: Optional[MetricsReport] = None
    checkpoint_path: Optional[Path] = None


def train_step(model: FusionModel, batch_: SampleBatch, state: AdamState, config: ModelConfig, epoch: int) -> float:
    """
    One forward/backward/update on a mini-batch.

    Returns:
        The batch loss before the update.

    Raises:
        DivergenceError: If the loss is not finite (``last_checkpoint`` is filled in by the caller).
    """
    reset_graph()
    _, loss = model.loss(batch_)
    value = loss.item()
    if not math.isfinite(value):
        reset_graph()
        raise DivergenceError(epoch, None)

    named = model.named_parameters()
    gradient_map = backward(loss)
    grads = {name: gradient_map.for_tensor(p) for name, p in named.items()}
    clip_grad_norm(grads, config.grad_clip)
    adam_step({name: p.data for name, p in named.items()}, grads, state)
    return value


def _evaluate_batch(model: FusionModel, batch_: SampleBatch) -> Tuple[np.ndarray, float]:
    with no_grad():
        pred, loss = model.loss(batch_)
    return pred.data.copy(), loss.item() * len(batch_)


def predict(model: FusionModel, samples: Sequence[Sample], config: ModelConfig) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Predictions, labels and mean loss for ``samples`` with the model in eval mode.

    Batches are evaluated on up to FUSION_NUM_THREADS worker threads and
    reduced in batch order.

    Raises:
        DataError: If ``samples`` is empty.
    """
    if not samples:
        raise DataError("Cannot evaluate an empty set of samples")
    model.eval()
    batches = list(batch(samples, config.batch_size, config.label_task, config.n_labels))
    workers = min(get_num_threads(), max(len(batches), 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda b: _evaluate_batch(model, b), batches))
    else:
        outputs = [_evaluate_batch(model, b) for b in batches]

    predictions = np.concatenate([p for p, _ in outputs], axis=0)
    labels = np.concatenate([b.labels for b in batches], axis=0)
    loss = sum(total for _, total in outputs) / len(samples)
    return predictions, labels, loss


def evaluate_model(model: FusionModel, samples: Sequence[Sample], config: ModelConfig) -> MetricsReport:
    """MetricsReport of ``model`` on ``samples``."""
    predictions, labels, loss = predict(model, samples, config)
    return compute_report(predictions, labels, loss, config.label_task)


def _record(epoch: int, train_loss: float, report: MetricsReport) -> Dict[str, Any]:
    return {"epoch": epoch, "train_loss": train_loss, "valid": report.to_flat_dict()}


def train(config: ModelConfig, dataset: Dataset, out_dir: Union[str, Path]) -> TrainingResult:
    """
    Train ``config.model_name`` on the train split, keeping the best validation checkpoint.

    Args:
        config: Model configuration; input dimensions are bound from the dataset.
        dataset: The full dataset, split 7:1.5:1.5 with ``config.seed``.
        out_dir: Run directory (created if missing).

    Returns:
        The run's history, best epoch and test report. The test report is None,
        and test_metrics.json is not written, when the test split is empty.

    Raises:
        ConfigError: If the config does not fit the dataset.
        DataError: If the validation split is empty.
        DivergenceError: If the training loss becomes non-finite.
    """
    config = config.bind_dataset(dataset.header)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / CHECKPOINT_FILE
    history_path = out_dir / HISTORY_FILE
    history_path.write_text("", encoding="utf-8")
    save_json_file(config.to_dict(), out_dir / CONFIG_FILE)

    train_samples, valid_samples, test_samples = split(dataset.samples, config.seed)
    if not valid_samples:
        raise DataError(f"Validation split of {len(dataset.samples)} samples is empty")
    model = build_model(config)
    state = AdamState(lr=config.learning_rate)
    task = config.label_task
    logger.info(
        f"Training {config.model_name} ({count_parameters(model)} parameters) on "
        f"{len(train_samples)}/{len(valid_samples)}/{len(test_samples)} samples for {config.epochs} epochs"
    )

    result = TrainingResult(config=config, checkpoint_path=checkpoint_path)
    _, _, initial_loss = predict(model, train_samples, config)
    valid_report = evaluate_model(model, valid_samples, config)
    record = _record(0, initial_loss, valid_report)
    append_json_line(record, history_path)
    result.history.append(record)
    best_score = valid_report.selection_score(task)
    save_checkpoint(checkpoint_path, model, config.to_dict())

    shuffle_root = RngState(config.seed).fold_in(SHUFFLE_STREAM)
    for epoch in range(1, config.epochs + 1):
        model.train()
        total = 0.0
        seed = shuffle_root.fold_in(epoch).seed
        for batch_ in batch(train_samples, config.batch_size, task, config.n_labels, shuffle_seed=seed):
            try:
                total += train_step(model, batch_, state, config, epoch) * len(batch_)
            except DivergenceError:
                logger.error(f"Loss diverged at epoch {epoch}; best checkpoint is from epoch {result.best_epoch}")
                raise DivergenceError(epoch, str(checkpoint_path))
        train_loss = total / len(train_samples)

        valid_report = evaluate_model(model, valid_samples, config)
        record = _record(epoch, train_loss, valid_report)
        append_json_line(record, history_path)
        result.history.append(record)

        score = valid_report.selection_score(task)
        improved = score > best_score
        if improved:
            best_score = score
            result.best_epoch = epoch
            save_checkpoint(checkpoint_path, model, config.to_dict())
        logger.info(
            f"Epoch {epoch}/{config.epochs}: train loss {train_loss:.6f}, "
            f"valid loss {valid_report.loss:.6f}, score {score:.4f}{' (best)' if improved else ''}"
        )

    stored_config, arrays = read_checkpoint(checkpoint_path)
    load_into(model, arrays, config.to_dict(), stored_config)
    if not test_samples:
        logger.warning(f"Test split is empty; best epoch {result.best_epoch}, no test report written")
        return result
    result.test_report = evaluate_model(model, test_samples, config)
    save_json_file(result.test_report.to_flat_dict(), out_dir / TEST_METRICS_FILE)
    logger.info(f"Best epoch {result.best_epoch}; test report written to {out_dir / TEST_METRICS_FILE}")
    return result


def load_model(checkpoint_path: Union[str, Path]) -> Tuple[FusionModel, ModelConfig]:
    """
    Rebuild a model from a checkpoint file.

    Raises:
        CheckpointError: If the file is malformed or does not match its config.
    """
    stored_config, arrays = read_checkpoint(checkpoint_path)
    config = parse_config(stored_config)
    model = build_model(config)
    load_into(model, arrays, config.to_dict(), stored_config)
    return model, config


def evaluate_checkpoint(checkpoint_path: Union[str, Path], dataset: Dataset, split_name: str = "test") -> MetricsReport:
    """
    Evaluate a saved model on one split of ``dataset``.

    The split is recomputed from the checkpoint config's seed, so it matches
    the split used in training.
    """
    model, config = load_model(checkpoint_path)
    config.bind_dataset(dataset.header)
    samples = select_split(dataset.samples, config.seed, split_name)
    report = evaluate_model(model, samples, config)
    logger.info(f"Evaluated {config.model_name} on {len(samples)} {split_name} samples")
    return report


def _run_directory_name(model_name: str) -> str:
    return model_name.replace("[", "_").replace("]", "")


def compare(
    model_names: Sequence[str],
    base_config: ModelConfig,
    dataset: Dataset,
    out_dir: Union[str, Path],
) -> List[Dict[str, Any]]:
    """
    Train each named model with otherwise identical settings and collect test reports.

    Returns:
        One record per model: {"model": name, **flat test report} (just the name when the
        test split is empty); also written to compare.jsonl in ``out_dir``.
    """
    out_dir = Path(out_dir)
    records = []
    for name in model_names:
        data = base_config.to_dict()
        data.update(model_name=name, fusion=None, main=None)
        config = parse_config(data)
        result = train(config, dataset, out_dir / _run_directory_name(name))
        report = result.test_report.to_flat_dict() if result.test_report is not None else {}
        records.append({"model": name, **report})
    write_json_lines(records, out_dir / COMPARE_FILE)
    return records
