#!/usr/bin/env python3
"""
Deterministic train/valid/test splits and padded mini-batches.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DataError
from core.utils import chunked
from dataset.io import PAD_ID, Sample, label_block
from engine.rng import RngState

logger = logging.getLogger(__name__)

SPLIT_RATIOS = (7.0, 1.5, 1.5)
SPLIT_NAMES = ("train", "valid", "test")


@dataclass
class SampleBatch:
    """
    Stacked model inputs for one mini-batch.

    ``note_ids`` is padded with PAD_ID to the longest note in the batch and
    ``attention_mask`` marks real tokens with 1.
    """

    ids: List[int]
    ti: np.ndarray
    ts: np.ndarray
    note_ids: np.ndarray
    attention_mask: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def split_sizes(n: int, ratios: Sequence[float] = SPLIT_RATIOS) -> Tuple[int, ...]:
    """
    Split sizes by largest-remainder rounding.

    Leftover samples go to the largest fractional parts; ties favor the
    earlier split (train, then valid, then test).
    """
    total = float(sum(ratios))
    exact = [n * r / total for r in ratios]
    sizes = [int(np.floor(e)) for e in exact]
    leftover = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return tuple(sizes)


def split(
    samples: Sequence[Sample],
    seed: int,
    ratios: Sequence[float] = SPLIT_RATIOS,
) -> Tuple[List[Sample], List[Sample], List[Sample]]:
    """
    Randomly partition samples into train, validation and test sets.

    Membership depends only on ``seed`` and the number of samples; each part
    keeps file order.

    Raises:
        DataError: If there are fewer than three samples.
    """
    n = len(samples)
    if n < 3:
        raise DataError(f"Cannot split {n} samples into train/valid/test; need at least 3")
    sizes = split_sizes(n, ratios)
    permutation = RngState(seed).generator().permutation(n)
    parts = []
    start = 0
    for size in sizes:
        members = np.sort(permutation[start:start + size])
        parts.append([samples[i] for i in members])
        start += size
    logger.debug(f"Split {n} samples into {sizes}")
    return parts[0], parts[1], parts[2]


def select_split(samples: Sequence[Sample], seed: int, name: str) -> List[Sample]:
    """One named part ("train", "valid" or "test") of ``split``."""
    if name not in SPLIT_NAMES:
        raise DataError(f"Unknown split '{name}'; valid: {', '.join(SPLIT_NAMES)}")
    return split(samples, seed)[SPLIT_NAMES.index(name)]


def make_batch(samples: Sequence[Sample], task: str, n_labels: int) -> SampleBatch:
    """
    Stack samples into arrays, padding notes to the longest in the batch.
    """
    width = max(len(s.note_ids) for s in samples)
    note_ids = np.full((len(samples), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(samples), width), dtype=np.float64)
    for row, sample in enumerate(samples):
        note_ids[row, :len(sample.note_ids)] = sample.note_ids
        mask[row, :len(sample.note_ids)] = 1.0
    return SampleBatch(
        ids=[s.id for s in samples],
        ti=np.stack([s.ti for s in samples]),
        ts=np.stack([s.ts for s in samples]),
        note_ids=note_ids,
        attention_mask=mask,
        labels=label_block(samples, task, n_labels),
    )


def batch(
    samples: Sequence[Sample],
    batch_size: int,
    task: str,
    n_labels: int,
    shuffle_seed: Optional[int] = None,
) -> Iterator[SampleBatch]:
    """
    Yield mini-batches; the last one may be smaller.

    Args:
        samples: Samples to batch.
        batch_size: Maximum batch size, at least 1.
        task: "binary" or "multilabel".
        n_labels: Label-space size.
        shuffle_seed: If given, batches follow a seeded permutation; otherwise input order.
    """
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    order = list(range(len(samples)))
    if shuffle_seed is not None:
        order = [int(i) for i in RngState(shuffle_seed).generator().permutation(len(samples))]
    for indices in chunked(order, batch_size):
        yield make_batch([samples[i] for i in indices], task, n_labels)
