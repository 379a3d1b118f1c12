#!/usr/bin/env python3
"""
Dataset records and the JSON-lines dataset file.

The first line of a dataset file is a header with the keys version, task, d1,
l, d2, d3_max, vocab, n_labels and n_samples. Every following line is one
sample: {"id", "ti", "ts", "note_ids", "labels"}, where labels is 0/1 for the
binary task and the sorted list of positive label indices for the multilabel task.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from core.errors import DataError
from core.utils import dump_json_line, read_json_lines

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
PAD_ID = 0
CLS_ID = 1

LabelValue = Union[int, List[int]]


class DatasetHeader(BaseModel):
    """Header line of a dataset file."""

    version: int = Field(FORMAT_VERSION, description="File format version")
    task: Literal["binary", "multilabel"] = Field(..., description="Label task")
    d1: int = Field(..., ge=1, description="Time-invariant feature count")
    l: int = Field(..., ge=1, description="Time steps per series")
    d2: int = Field(..., ge=1, description="Time-series feature count")
    d3_max: int = Field(..., ge=1, description="Longest note sequence")
    vocab: int = Field(..., ge=2, description="Token vocabulary size, including pad and CLS")
    n_labels: int = Field(..., ge=1, description="Label-space size (1 for binary)")
    n_samples: int = Field(..., ge=0, description="Number of sample lines")


@dataclass
class Sample:
    """
    One stay: static features, a (L, D2) series, note token ids and labels.
    """

    id: int
    ti: np.ndarray
    ts: np.ndarray
    note_ids: List[int]
    labels: LabelValue

    def to_record(self) -> Dict[str, Any]:
        return {
            "id": int(self.id),
            "ti": [float(v) for v in self.ti],
            "ts": [[float(v) for v in row] for row in self.ts],
            "note_ids": [int(t) for t in self.note_ids],
            "labels": self.labels if isinstance(self.labels, int) else [int(i) for i in self.labels],
        }


@dataclass
class Dataset:
    """A header plus its samples, in file order."""

    header: DatasetHeader
    samples: List[Sample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)


def multi_hot(indices: Sequence[Sequence[int]], n_labels: int) -> np.ndarray:
    """
    Build a (B, N) 0/1 matrix from per-sample lists of positive label indices.

    Raises:
        DataError: If an index is outside [0, n_labels).
    """
    block = np.zeros((len(indices), n_labels), dtype=np.float64)
    for row, positives in enumerate(indices):
        for index in positives:
            if not 0 <= int(index) < n_labels:
                raise DataError(f"Label index {index} outside [0, {n_labels})")
            block[row, int(index)] = 1.0
    return block


def label_block(samples: Sequence[Sample], task: str, n_labels: int) -> np.ndarray:
    """(B,) binary labels or the (B, N) multi-hot block."""
    if task == "binary":
        return np.array([float(s.labels) for s in samples], dtype=np.float64)
    return multi_hot([s.labels for s in samples], n_labels)


def _parse_sample(record: Dict[str, Any], header: DatasetHeader, line: int) -> Sample:
    try:
        ti = np.asarray(record["ti"], dtype=np.float64)
        ts = np.asarray(record["ts"], dtype=np.float64)
        note_ids = [int(t) for t in record["note_ids"]]
        labels = record["labels"]
        sample_id = int(record["id"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Line {line}: malformed sample ({e})")

    if ti.shape != (header.d1,):
        raise DataError(f"Line {line}: ti has shape {ti.shape}, expected ({header.d1},)")
    if ts.shape != (header.l, header.d2):
        raise DataError(f"Line {line}: ts has shape {ts.shape}, expected ({header.l}, {header.d2})")
    if not (np.isfinite(ti).all() and np.isfinite(ts).all()):
        raise DataError(f"Line {line}: features must be finite")
    if not note_ids or len(note_ids) > header.d3_max:
        raise DataError(f"Line {line}: note_ids must hold 1..{header.d3_max} ids")
    if note_ids[0] != CLS_ID:
        raise DataError(f"Line {line}: note_ids must start with the classification token {CLS_ID}")
    if min(note_ids) < 0 or max(note_ids) >= header.vocab:
        raise DataError(f"Line {line}: token id out of vocabulary of size {header.vocab}")

    if header.task == "binary":
        if labels not in (0, 1) or isinstance(labels, bool):
            raise DataError(f"Line {line}: binary label must be 0 or 1, got {labels!r}")
        labels = int(labels)
    else:
        if not isinstance(labels, list) or any(not 0 <= int(i) < header.n_labels for i in labels):
            raise DataError(f"Line {line}: multilabel labels must be indices in [0, {header.n_labels})")
        labels = sorted(int(i) for i in labels)
    return Sample(id=sample_id, ti=ti, ts=ts, note_ids=note_ids, labels=labels)


def write_dataset(dataset: Dataset, file_path: Union[str, Path]) -> Path:
    """
    Write a dataset file (header line, then one line per sample).

    Returns:
        The written path.
    """
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dump_json_line(dataset.header.model_dump()))
        f.write("\n")
        for sample in dataset.samples:
            f.write(dump_json_line(sample.to_record()))
            f.write("\n")
    logger.info(f"Wrote {len(dataset)} samples to {file_path}")
    return file_path


def read_dataset(file_path: Union[str, Path]) -> Dataset:
    """
    Read and validate a dataset file.

    Raises:
        DataError: If the file is missing, the header is invalid, or a sample
            violates the header's dimensions.
    """
    file_path = Path(file_path)
    try:
        records: Iterable[Dict[str, Any]] = list(read_json_lines(file_path))
    except FileNotFoundError as e:
        raise DataError(str(e))
    except json.JSONDecodeError as e:
        raise DataError(f"{file_path}: invalid JSON ({e})")

    if not records:
        raise DataError(f"{file_path}: empty dataset file")
    try:
        header = DatasetHeader(**records[0])
    except (ValidationError, TypeError) as e:
        raise DataError(f"{file_path}: invalid header ({e})")
    if header.version != FORMAT_VERSION:
        raise DataError(f"{file_path}: unsupported format version {header.version}")
    if header.task == "binary" and header.n_labels != 1:
        raise DataError(f"{file_path}: binary datasets must declare n_labels = 1")

    samples = [_parse_sample(record, header, line) for line, record in enumerate(records[1:], start=2)]
    if len(samples) != header.n_samples:
        raise DataError(f"{file_path}: header declares {header.n_samples} samples, found {len(samples)}")
    logger.debug(f"Read {len(samples)} samples from {file_path}")
    return Dataset(header=header, samples=samples)
