#!/usr/bin/env python3
"""
Tests for finite-difference gradient checking.
"""

import numpy as np
import pytest

from core.errors import GraphError
from core.testing import random_tensor
from engine import ops
from engine.gradcheck import check_primitives, grad_check
from engine.tensor import Tensor


class TestGradCheck:
    """Tests for grad_check."""

    def test_relu_away_from_kink(self):
        x = random_tensor((3, 4), seed=1, margin=1e-3)
        assert grad_check(lambda a: ops.sum_all(ops.relu(a)), [x]) < 1e-4

    def test_matmul_chain(self):
        a = random_tensor((3, 4), seed=2)
        b = random_tensor((4, 2), seed=3)
        w = Tensor(np.random.default_rng(4).uniform(0.5, 1.5, size=(3, 2)))
        error = grad_check(lambda x, y: ops.sum_all(ops.mul(ops.matmul(x, y), w)), [a, b])
        assert error < 1e-4

    def test_constant_function(self):
        x = random_tensor((2, 2), seed=5)
        assert grad_check(lambda a: Tensor(3.0), [x]) == 0.0

    def test_non_scalar_output_raises(self):
        x = random_tensor((2, 2), seed=6)
        with pytest.raises(GraphError):
            grad_check(lambda a: ops.relu(a), [x])

    def test_inputs_restored(self):
        x = random_tensor((2, 3), seed=7, requires_grad=False)
        before = x.data.copy()

        grad_check(lambda a: ops.sum_all(ops.tanh(a)), [x])

        np.testing.assert_array_equal(x.data, before)
        assert not x.requires_grad

    def test_subsampled_entries(self):
        x = random_tensor((10, 10), seed=8)
        assert grad_check(lambda a: ops.l2_norm(a), [x], max_entries_per_input=5) < 1e-4


class TestPrimitiveSuite:
    """Every primitive passes the finite-difference oracle."""

    @pytest.mark.parametrize("result", check_primitives(), ids=lambda r: r.name)
    def test_primitive(self, result):
        assert result.passed, f"{result.name}: {result.max_relative_error:.3e}"
