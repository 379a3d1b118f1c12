#!/usr/bin/env python3
"""
Testing utilities for the gatefuse toolkit.
"""

import os
import json
import tempfile
from typing import Any, Dict, Optional, Sequence
from pathlib import Path
from contextlib import contextmanager

import numpy as np


@contextmanager
def temp_env_vars(**kwargs):
    """
    Temporarily set environment variables for testing.

    Args:
        **kwargs: Environment variables to set.

    Yields:
        None
    """
    original_values = {}

    # Save original values and set new values
    for key, value in kwargs.items():
        if key in os.environ:
            original_values[key] = os.environ[key]
        os.environ[key] = value

    try:
        yield
    finally:
        # Restore original values
        for key in kwargs:
            if key in original_values:
                os.environ[key] = original_values[key]
            else:
                del os.environ[key]


@contextmanager
def temp_json_file(data: Dict[str, Any]) -> Path:
    """
    Create a temporary JSON file for testing.

    Args:
        data: The data to write to the file.

    Yields:
        The path to the temporary file.
    """
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as f:
        json.dump(data, f)
        temp_path = Path(f.name)

    try:
        yield temp_path
    finally:
        if temp_path.exists():
            temp_path.unlink()


def random_tensor(
    shape: Sequence[int],
    seed: int = 0,
    requires_grad: bool = True,
    low: float = -1.0,
    high: float = 1.0,
    margin: Optional[float] = None,
):
    """
    Build a Tensor of uniform random values for tests.

    Args:
        shape: The tensor shape.
        seed: Seed for the generator.
        requires_grad: Whether the tensor is a differentiable leaf.
        low: Lower bound of the uniform draw.
        high: Upper bound of the uniform draw.
        margin: If given, push values at least this far away from zero
            (keeps relu/min kinks out of finite-difference stencils).

    Returns:
        A new Tensor.
    """
    from engine.tensor import Tensor

    rng = np.random.default_rng(seed)
    values = rng.uniform(low, high, size=tuple(shape))
    if margin is not None:
        values = np.where(np.abs(values) < margin, np.sign(values + 1e-300) * margin * 2, values)
    return Tensor(values, requires_grad=requires_grad)


def tiny_generator_spec(**overrides: Any):
    """
    A small GeneratorSpec suitable for fast tests.

    Args:
        **overrides: Field overrides.

    Returns:
        A GeneratorSpec instance.
    """
    from dataset.generator import GeneratorSpec

    fields: Dict[str, Any] = {
        "seed": 7,
        "n_samples": 24,
        "task": "binary",
        "d1": 4,
        "l": 5,
        "d2": 3,
        "d3_min": 4,
        "d3_max": 8,
        "vocab": 40,
        "n_labels": 1,
        "signal": {"time_series": 1.0},
    }
    fields.update(overrides)
    return GeneratorSpec(**fields)
