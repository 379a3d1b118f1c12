#!/usr/bin/env python3
"""
Finite-difference verification of analytic gradients.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from core.errors import GraphError
from engine import ops
from engine.rng import RngState
from engine.tensor import Tensor, backward, no_grad, reset_graph

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# Primitives with kinks are sampled at least this far from them.
KINK_MARGIN = 1e-3


@dataclass
class GradCheckResult:
    """
    Outcome of one finite-difference check.
    """

    name: str
    max_relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def _scalar(value: Tensor) -> float:
    if value.size != 1:
        raise GraphError(f"grad_check: function must return a scalar, got shape {value.shape}")
    return float(value.data.reshape(-1)[0])


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = FD_STEP,
    max_entries_per_input: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Compare backward() against central finite differences.

    Args:
        f: Builds a scalar from ``inputs`` using primitives.
        inputs: Tensors to differentiate with respect to; perturbed in place and restored.
        step: Finite-difference step.
        max_entries_per_input: If set, check only this many randomly chosen entries per input.
        seed: Seed for the entry subsample.

    Returns:
        max over checked entries of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

    Raises:
        GraphError: If ``f`` does not return a scalar.
    """
    previous_flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True

    try:
        reset_graph()
        out = f(*inputs)
        _scalar(out)
        if out.requires_grad:
            grads = backward(out)
            analytic = [grads.for_tensor(t) for t in inputs]
        else:
            analytic = [np.zeros(t.shape) for t in inputs]

        chooser = RngState(seed).generator()
        worst = 0.0
        with no_grad():
            for tensor, grad in zip(inputs, analytic):
                flat = tensor.data.reshape(-1)
                indices = np.arange(flat.size)
                if max_entries_per_input is not None and flat.size > max_entries_per_input:
                    indices = np.sort(chooser.choice(flat.size, size=max_entries_per_input, replace=False))
                for index in indices:
                    original = flat[index]
                    flat[index] = original + step
                    plus = _scalar(f(*inputs))
                    flat[index] = original - step
                    minus = _scalar(f(*inputs))
                    flat[index] = original
                    numeric = (plus - minus) / (2.0 * step)
                    worst = max(worst, relative_error(float(grad.reshape(-1)[index]), numeric))
        return worst
    finally:
        for t, flag in zip(inputs, previous_flags):
            t.requires_grad = flag


def _weighted_readout(y: Tensor, seed: int) -> Tensor:
    # Random weights keep every output entry in play with distinct sensitivities.
    weights = RngState(seed).generator().uniform(0.5, 1.5, size=y.shape)
    return ops.sum_all(ops.mul(y, weights))


def _draw(shape, seed: int, low: float = -1.0, high: float = 1.0, avoid: Optional[float] = None) -> Tensor:
    values = RngState(seed).generator().uniform(low, high, size=shape)
    if avoid is not None:
        near = np.abs(values - avoid) < KINK_MARGIN
        values = np.where(near, avoid + np.where(values >= avoid, 1.0, -1.0) * 4 * KINK_MARGIN, values)
    return Tensor(values, requires_grad=True)


def primitive_cases() -> List[tuple]:
    """
    (name, builder, inputs) triples covering every differentiable primitive.
    """
    ids = np.array([[0, 2, 2], [3, 1, 0]])
    fixed_rng = RngState(11)
    return [
        ("matmul", lambda a, b: _weighted_readout(ops.matmul(a, b), 1), [_draw((3, 4), 1), _draw((4, 2), 2)]),
        ("matmul_batched_transposed", lambda a, b: _weighted_readout(ops.matmul(a, b, transpose_b=True), 2),
         [_draw((2, 3, 4), 3), _draw((2, 5, 4), 4)]),
        ("add_broadcast", lambda a, b: _weighted_readout(ops.add(a, b), 3), [_draw((2, 3, 4), 5), _draw((4,), 6)]),
        ("mul", lambda a, b: _weighted_readout(ops.mul(a, b), 4), [_draw((3, 4), 7), _draw((3, 1), 8)]),
        ("concat", lambda a, b: _weighted_readout(ops.concat([a, b]), 5), [_draw((2, 2), 9), _draw((2, 3), 10)]),
        ("relu", lambda a: _weighted_readout(ops.relu(a), 6), [_draw((3, 4), 12, avoid=0.0)]),
        ("sigmoid", lambda a: _weighted_readout(ops.sigmoid(a), 7), [_draw((3, 4), 13, -3, 3)]),
        ("tanh", lambda a: _weighted_readout(ops.tanh(a), 8), [_draw((3, 4), 14, -2, 2)]),
        ("softmax", lambda a: _weighted_readout(ops.softmax(a), 9), [_draw((3, 5), 15, -2, 2)]),
        ("log", lambda a: _weighted_readout(ops.log(a), 10), [_draw((3, 4), 16, 0.2, 2.0)]),
        ("exp", lambda a: _weighted_readout(ops.exp(a), 11), [_draw((3, 4), 17)]),
        ("l2_norm", lambda a: ops.l2_norm(a), [_draw((3, 4), 18)]),
        ("l2_norm_rows", lambda a: _weighted_readout(ops.l2_norm(a, axis=-1), 12), [_draw((3, 4), 19)]),
        ("scalar_min", lambda a: _weighted_readout(ops.scalar_min(a, 0.3), 13), [_draw((3, 4), 20, avoid=0.3)]),
        ("scale", lambda a: _weighted_readout(ops.scale(a, -2.5), 14), [_draw((3, 4), 21)]),
        ("slice", lambda a: _weighted_readout(ops.slice_along(a, 1, 1, 3), 15), [_draw((2, 4, 3), 22)]),
        ("reshape", lambda a: _weighted_readout(ops.reshape(a, (4, 3)), 16), [_draw((2, 6), 23)]),
        ("mean", lambda a: _weighted_readout(ops.mean(a, axis=1), 17), [_draw((2, 4, 3), 24)]),
        ("max", lambda a: _weighted_readout(ops.max_along(a, 1), 18), [_draw((2, 4, 3), 25)]),
        ("last", lambda a: _weighted_readout(ops.last_along(a, 1), 19), [_draw((2, 4, 3), 26)]),
        ("outer_product", lambda a, b: _weighted_readout(ops.outer_product(a, b), 20),
         [_draw((2, 3), 27), _draw((2, 4), 28)]),
        ("embedding_lookup", lambda t: _weighted_readout(ops.embedding_lookup(t, ids), 21), [_draw((4, 3), 29)]),
        ("layer_norm", lambda a: _weighted_readout(ops.layer_norm(a), 22), [_draw((3, 5), 30)]),
        ("dropout", lambda a: _weighted_readout(ops.dropout(a, 0.3, fixed_rng, True), 23), [_draw((3, 4), 31)]),
        ("conv1d", lambda x, w: _weighted_readout(ops.conv1d(x, w), 24), [_draw((2, 5, 3), 32), _draw((3, 3, 2), 33)]),
    ]


def check_primitives(tolerance: float = DEFAULT_TOLERANCE) -> List[GradCheckResult]:
    """
    Run the finite-difference check for every primitive.

    Args:
        tolerance: Maximum allowed relative error.

    Returns:
        One result per case, in a fixed order.
    """
    results = []
    for name, builder, inputs in primitive_cases():
        error = grad_check(builder, inputs)
        results.append(GradCheckResult(name=name, max_relative_error=error, tolerance=tolerance))
        logger.debug(f"gradcheck {name}: max relative error {error:.3e}")
    return results
