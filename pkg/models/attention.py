#!/usr/bin/env python3
"""
Multi-head scaled dot-product attention and the post-norm transformer layer.

Shared by the time-series transformer encoder, the Star-Transformer, the text
encoder and attention fusion.
"""

import logging
import math
from typing import List, Optional

import numpy as np

from core.errors import ConfigError, ShapeError
from engine import ops
from engine.nn import Dropout, LayerNorm, Linear, Module
from engine.tensor import Tensor, is_grad_enabled

logger = logging.getLogger(__name__)

# Additive logit for masked keys; exp() of it underflows to exactly 0.
MASK_FILL = -1e9


def mask_bias(key_mask: np.ndarray, query_rank: int) -> Tensor:
    """
    Turn a (B, Lk) 0/1 key mask into an additive logit bias broadcastable to scores.

    Args:
        key_mask: 1 for attendable keys, 0 for padding.
        query_rank: Rank of the attention scores tensor.

    Returns:
        A constant Tensor of shape (B, 1, ..., 1, Lk).
    """
    key_mask = np.asarray(key_mask, dtype=np.float64)
    bias = (1.0 - key_mask) * MASK_FILL
    shape = (key_mask.shape[0],) + (1,) * (query_rank - 2) + (key_mask.shape[1],)
    return Tensor(bias.reshape(shape))


class MultiHeadAttention(Module):
    """
    Multi-head attention with separate query/key/value/output projections.

    Heads are taken as contiguous slices of the projected width.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
        generator: Optional[np.random.Generator] = None,
    ):
        if heads < 1 or dim % heads != 0:
            raise ConfigError(f"Attention width {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.output = Linear(dim, dim, rng)
        self.attention_dropout = Dropout(dropout, generator)
        self._last_weights: List[np.ndarray] = []

    @property
    def last_attention(self) -> List[np.ndarray]:
        """Per-head attention weights of the most recent forward pass with gradients on."""
        return self._last_weights

    def forward(
        self,
        query: Tensor,
        key: Tensor,
        value: Optional[Tensor] = None,
        key_mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        """
        Attend from ``query`` positions over ``key``/``value`` positions.

        Args:
            query: (..., Lq, d).
            key: (..., Lk, d).
            value: (..., Lk, d); defaults to ``key``.
            key_mask: Optional (B, Lk) 0/1 mask over keys.

        Returns:
            (..., Lq, d).
        """
        value = key if value is None else value
        if query.shape[-1] != self.dim or key.shape[-1] != self.dim or value.shape[-1] != self.dim:
            raise ShapeError("attention", [query.shape, key.shape], f"expected width {self.dim}")

        q = self.query(query)
        k = self.key(key)
        v = self.value(value)
        bias = mask_bias(key_mask, q.ndim) if key_mask is not None else None

        outputs = []
        weights = []
        scale = 1.0 / math.sqrt(self.head_dim)
        for head in range(self.heads):
            lo, hi = head * self.head_dim, (head + 1) * self.head_dim
            q_h = ops.slice_along(q, -1, lo, hi) if self.heads > 1 else q
            k_h = ops.slice_along(k, -1, lo, hi) if self.heads > 1 else k
            v_h = ops.slice_along(v, -1, lo, hi) if self.heads > 1 else v
            scores = ops.scale(ops.matmul(q_h, k_h, transpose_b=True), scale)
            if bias is not None:
                scores = ops.add(scores, bias)
            attention = ops.softmax(scores)
            weights.append(attention.data)
            outputs.append(ops.matmul(self.attention_dropout(attention), v_h))

        if is_grad_enabled():
            self._last_weights = weights
        context = ops.concat(outputs) if self.heads > 1 else outputs[0]
        return self.output(context)


class FeedForward(Module):
    """
    Position-wise two-layer network with ReLU.
    """

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.inner = Linear(dim, hidden, rng)
        self.outer = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.outer(ops.relu(self.inner(x)))


class TransformerLayer(Module):
    """
    Post-norm encoder layer: x = LN(x + Attn(x)); x = LN(x + FFN(x)).
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        ffn_dim: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
        generator: Optional[np.random.Generator] = None,
    ):
        self.attention = MultiHeadAttention(dim, heads, rng, dropout, generator)
        self.attention_norm = LayerNorm(dim)
        self.feed_forward = FeedForward(dim, ffn_dim, rng)
        self.output_norm = LayerNorm(dim)
        self.dropout = Dropout(dropout, generator)

    def forward(self, x: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        attended = self.attention(x, x, key_mask=key_mask)
        x = self.attention_norm(ops.add(x, self.dropout(attended)))
        transformed = self.feed_forward(x)
        return self.output_norm(ops.add(x, self.dropout(transformed)))
