#!/usr/bin/env python3
"""
Parameter containers and initializers.

A Module owns parameter Tensors and child Modules as plain attributes; their
insertion order fixes the parameter naming and therefore checkpoint layout.
"""

import logging
import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from core.errors import CheckpointError, ShapeError
from engine import ops
from engine.tensor import Tensor

logger = logging.getLogger(__name__)

EMBEDDING_STD = 0.02


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Optional[Tuple[int, ...]] = None) -> Tensor:
    """
    Glorot/Xavier uniform initialization, bound sqrt(6 / (fan_in + fan_out)).
    """
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)), requires_grad=True)


def normal_init(rng: np.random.Generator, shape: Tuple[int, ...], std: float = EMBEDDING_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros(shape: Tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape: Tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Module:
    """
    Base class for anything holding trainable tensors.
    """

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{index}", item

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        """
        All trainable tensors keyed by dotted attribute path.
        """
        params: Dict[str, Tensor] = {}
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    params[full] = value
            else:
                params.update(value.named_parameters(prefix=f"{full}."))
        return params

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Copies of all parameter buffers."""
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        """
        Overwrite parameters from a name -> array mapping.

        Raises:
            CheckpointError: If names or shapes do not match exactly.
        """
        params = self.named_parameters()
        missing = sorted(set(params) - set(arrays))
        unexpected = sorted(set(arrays) - set(params))
        if missing or unexpected:
            raise CheckpointError(f"Parameter mismatch; missing={missing} unexpected={unexpected}")
        for name, param in params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != param.shape:
                raise CheckpointError(f"Shape mismatch for '{name}': {value.shape} vs {param.shape}")
            param.data = value.copy()


class Linear(Module):
    """
    Affine map over the last axis: ``x @ W + b``.
    """

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = xavier_uniform(rng, in_features, out_features)
        self.bias = zeros((out_features,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError("linear", [x.shape, self.weight.shape])
        y = ops.matmul(x, self.weight)
        if self.bias is not None:
            y = ops.add(y, self.bias)
        return y


class LayerNorm(Module):
    """
    Layer normalization with learned gain and bias.
    """

    def __init__(self, dim: int, eps: float = ops.LAYER_NORM_EPS):
        self.eps = eps
        self.gain = ones((dim,))
        self.bias = zeros((dim,))

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(ops.mul(ops.layer_norm(x, eps=self.eps), self.gain), self.bias)


class Embedding(Module):
    """
    Lookup table initialized from N(0, 0.02).
    """

    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        self.num_embeddings = num_embeddings
        self.dim = dim
        self.table = normal_init(rng, (num_embeddings, dim))

    def forward(self, ids: np.ndarray) -> Tensor:
        return ops.embedding_lookup(self.table, ids)


class Dropout(Module):
    """
    Inverted dropout sharing the owning model's generator.
    """

    def __init__(self, p: float, generator: Optional[np.random.Generator]):
        self.p = p
        self._generator = generator

    def forward(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.p, self._generator, self.training)


def count_parameters(module: Module) -> int:
    """Total number of trainable scalars."""
    return sum(p.size for p in module.parameters())
