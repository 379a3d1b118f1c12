#!/usr/bin/env python3
"""
Tests for splits and mini-batches.
"""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from core.errors import DataError
from core.testing import tiny_generator_spec
from dataset.batching import batch, make_batch, select_split, split, split_sizes
from dataset.generator import generate
from dataset.io import PAD_ID


@pytest.fixture(scope="module")
def samples():
    return generate(tiny_generator_spec(n_samples=20)).samples


class TestSplit:
    """Tests for the train/valid/test split."""

    @pytest.mark.parametrize(
        "n, expected",
        [(20, (14, 3, 3)), (10, (7, 2, 1)), (3, (2, 1, 0)), (100, (70, 15, 15))],
    )
    def test_sizes(self, n, expected):
        assert split_sizes(n) == expected

    @given(n=st.integers(min_value=3, max_value=5000))
    def test_sizes_sum(self, n):
        sizes = split_sizes(n)
        assert sum(sizes) == n
        assert abs(sizes[0] - 0.7 * n) < 1

    def test_partition(self, samples):
        train, valid, test = split(samples, seed=0)
        ids = [s.id for s in train + valid + test]
        assert sorted(ids) == list(range(20))
        for part in (train, valid, test):
            assert [s.id for s in part] == sorted(s.id for s in part)

    def test_seeded(self, samples):
        first = [s.id for s in split(samples, seed=5)[0]]
        again = [s.id for s in split(samples, seed=5)[0]]
        other = [s.id for s in split(samples, seed=6)[0]]
        assert first == again
        assert first != other

    def test_too_few_samples(self, samples):
        with pytest.raises(DataError, match="at least 3"):
            split(samples[:2], seed=0)

    def test_select_split(self, samples):
        assert select_split(samples, 1, "test") == split(samples, 1)[2]
        with pytest.raises(DataError):
            select_split(samples, 1, "holdout")


class TestBatches:
    """Tests for make_batch and batch."""

    def test_padding_and_mask(self, samples):
        chosen = samples[:4]
        batch_ = make_batch(chosen, "binary", 1)
        width = max(len(s.note_ids) for s in chosen)
        assert batch_.note_ids.shape == (4, width)
        for row, sample in enumerate(chosen):
            length = len(sample.note_ids)
            assert batch_.note_ids[row, :length].tolist() == sample.note_ids
            assert (batch_.note_ids[row, length:] == PAD_ID).all()
            assert batch_.attention_mask[row].sum() == length
        assert batch_.ti.shape == (4, 4)
        assert batch_.ts.shape == (4, 5, 3)
        assert batch_.labels.shape == (4,)

    def test_last_batch_is_smaller(self, samples):
        sizes = [len(b) for b in batch(samples, 6, "binary", 1)]
        assert sizes == [6, 6, 6, 2]

    def test_input_order_without_seed(self, samples):
        ids = [i for b in batch(samples, 7, "binary", 1) for i in b.ids]
        assert ids == [s.id for s in samples]

    def test_shuffle_is_seeded(self, samples):
        a = [i for b in batch(samples, 5, "binary", 1, shuffle_seed=3) for i in b.ids]
        b = [i for b_ in batch(samples, 5, "binary", 1, shuffle_seed=3) for i in b_.ids]
        assert a == b
        assert sorted(a) == [s.id for s in samples]
        assert a != [s.id for s in samples]

    def test_bad_batch_size(self, samples):
        with pytest.raises(DataError):
            list(batch(samples, 0, "binary", 1))

    def test_multilabel_block(self):
        data = generate(tiny_generator_spec(n_samples=5, task="multilabel", n_labels=4))
        batch_ = make_batch(data.samples, "multilabel", 4)
        assert batch_.labels.shape == (5, 4)
        for row, sample in enumerate(data.samples):
            assert np.flatnonzero(batch_.labels[row]).tolist() == sample.labels
