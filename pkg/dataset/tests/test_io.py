#!/usr/bin/env python3
"""
Tests for the dataset file format.
"""

import json

import numpy as np
import pytest

from core.errors import DataError
from core.testing import tiny_generator_spec
from dataset.generator import generate
from dataset.io import label_block, multi_hot, read_dataset, write_dataset


@pytest.fixture
def dataset_file(tmp_path):
    path = tmp_path / "data.jsonl"
    write_dataset(generate(tiny_generator_spec(n_samples=6)), path)
    return path


def _rewrite(path, mutate):
    lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    mutate(lines)
    path.write_text("\n".join(json.dumps(line) for line in lines) + "\n", encoding="utf-8")


class TestDatasetFile:
    """Tests for write_dataset / read_dataset."""

    def test_round_trip(self, tmp_path):
        original = generate(tiny_generator_spec(n_samples=6, task="multilabel", n_labels=4))
        path = write_dataset(original, tmp_path / "nested" / "data.jsonl")
        loaded = read_dataset(path)
        assert loaded.header == original.header
        assert [s.to_record() for s in loaded.samples] == [s.to_record() for s in original.samples]

    def test_header_line(self, dataset_file):
        header = json.loads(dataset_file.read_text(encoding="utf-8").splitlines()[0])
        assert header["version"] == 1
        assert header["n_samples"] == 6
        assert set(header) == {"version", "task", "d1", "l", "d2", "d3_max", "vocab", "n_labels", "n_samples"}

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_dataset(tmp_path / "absent.jsonl")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataError, match="empty"):
            read_dataset(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text("{not json\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_dataset(path)

    @pytest.mark.parametrize(
        "mutate, message",
        [
            (lambda lines: lines[0].update(version=2), "version"),
            (lambda lines: lines[0].update(n_samples=7), "declares"),
            (lambda lines: lines[1].update(ti=[0.0]), "ti has shape"),
            (lambda lines: lines[1].update(note_ids=[5, 20]), "classification token"),
            (lambda lines: lines[1].update(note_ids=[1, 40]), "vocabulary"),
            (lambda lines: lines[1].update(note_ids=[]), "note_ids"),
            (lambda lines: lines[1].update(labels=2), "binary label"),
            (lambda lines: lines[1].pop("ts"), "malformed"),
        ],
    )
    def test_invalid_content(self, dataset_file, mutate, message):
        _rewrite(dataset_file, mutate)
        with pytest.raises(DataError, match=message):
            read_dataset(dataset_file)

    def test_non_finite_features(self, dataset_file):
        text = dataset_file.read_text(encoding="utf-8").splitlines()
        record = json.loads(text[1])
        record["ti"][0] = float("nan")
        text[1] = json.dumps(record)
        dataset_file.write_text("\n".join(text) + "\n", encoding="utf-8")
        with pytest.raises(DataError, match="finite"):
            read_dataset(dataset_file)


class TestLabels:
    """Tests for label helpers."""

    def test_multi_hot(self):
        block = multi_hot([[0, 2], [], [1]], 3)
        np.testing.assert_array_equal(block, [[1, 0, 1], [0, 0, 0], [0, 1, 0]])

    def test_multi_hot_out_of_range(self):
        with pytest.raises(DataError):
            multi_hot([[3]], 3)

    def test_binary_block(self):
        samples = generate(tiny_generator_spec(n_samples=5)).samples
        block = label_block(samples, "binary", 1)
        assert block.shape == (5,)
        assert block.tolist() == [float(s.labels) for s in samples]
