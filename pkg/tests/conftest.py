"""
Test configuration for pytest.
"""
import os
import sys

import pytest

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from core.testing import tiny_generator_spec
from dataset.generator import generate
from training.config import ModelConfig
from training.gradcheck_suite import TOY_DIMS


@pytest.fixture
def make_dataset():
    """
    Build a synthetic dataset from tiny-spec overrides.
    """
    def _make(**overrides):
        return generate(tiny_generator_spec(**overrides))

    return _make


@pytest.fixture
def make_config():
    """
    Build a toy-sized ModelConfig for a registry name.
    """
    def _make(model_name, **overrides):
        fields = dict(TOY_DIMS, batch_size=16, learning_rate=1e-2)
        fields.update(overrides)
        return ModelConfig(model_name=model_name, **fields)

    return _make
