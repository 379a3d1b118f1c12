#!/usr/bin/env python3
"""
Modality encoders.

- TiEncoder: E_ti = ReLU(Linear(I_ti)).
- Time-series encoders (lstm, cnn, star_transformer, transformer_encoder):
  E'_ts = ENC(I_ts), then E_ts = ReLU(Linear(E'_ts)), except transformer_encoder
  whose pooled state is used directly.
- TextEncoder: BERT-architecture encoder returning the classification-token state.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, DataError, ShapeError
from engine import ops
from engine.nn import Dropout, Embedding, LayerNorm, Linear, Module, xavier_uniform, zeros
from engine.tensor import Tensor
from models.attention import MultiHeadAttention, TransformerLayer

logger = logging.getLogger(__name__)

TS_VARIANTS = ("lstm", "cnn", "star_transformer", "transformer_encoder")

PAD_ID = 0
CLS_ID = 1
FORGET_GATE_BIAS = 1.0
CNN_LAYERS = 2


def _check_series(x: Tensor, input_dim: int) -> Tuple[int, int]:
    if x.ndim != 3:
        raise ShapeError("encode_ts", [x.shape], "expected (B, L, D2)")
    if x.shape[1] < 1:
        raise ShapeError("encode_ts", [x.shape], "series length must be >= 1")
    if x.shape[2] != input_dim:
        raise ShapeError("encode_ts", [x.shape, (input_dim,)], "feature width mismatch")
    return x.shape[0], x.shape[1]


def _time_step(x: Tensor, t: int) -> Tensor:
    batch, _, width = x.shape
    return ops.reshape(ops.slice_along(x, 1, t, t + 1), (batch, width))


def _stack_time(states: Sequence[Tensor]) -> Tensor:
    expanded = [ops.reshape(s, (s.shape[0], 1, s.shape[1])) for s in states]
    return ops.concat(expanded, axis=1) if len(expanded) > 1 else expanded[0]


class TiEncoder(Module):
    """
    Fully-connected encoder for time-invariant features.
    """

    def __init__(self, input_dim: int, output_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.linear = Linear(input_dim, output_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError("encode_ti", [x.shape, self.linear.weight.shape])
        return ops.relu(self.linear(x))


class TimeSeriesEncoder(Module):
    """
    Common interface: ``sequence`` gives per-step states, ``encode`` the pooled
    state E'_ts, and ``forward`` the encoded vector E_ts.
    """

    variant: str = ""
    input_dim: int
    state_dim: int
    output_dim: int

    def sequence(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def encode(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.projection(self.dropout(self.encode(x))))


class LstmLayer(Module):
    """
    One LSTM layer; gates are packed as [input, forget, candidate, output].
    """

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.input_weight = Tensor(rng.uniform(-bound, bound, size=(input_dim, 4 * hidden)), requires_grad=True)
        self.hidden_weight = Tensor(rng.uniform(-bound, bound, size=(hidden, 4 * hidden)), requires_grad=True)
        bias = rng.uniform(-bound, bound, size=(4 * hidden,))
        bias[hidden:2 * hidden] = FORGET_GATE_BIAS
        self.bias = Tensor(bias, requires_grad=True)

    def forward(self, x: Tensor) -> List[Tensor]:
        batch, length, _ = x.shape
        h_size = self.hidden
        h = Tensor(np.zeros((batch, h_size)))
        c = Tensor(np.zeros((batch, h_size)))
        states = []
        for t in range(length):
            z = ops.add(ops.add(ops.matmul(_time_step(x, t), self.input_weight), ops.matmul(h, self.hidden_weight)), self.bias)
            i = ops.sigmoid(ops.slice_along(z, -1, 0, h_size))
            f = ops.sigmoid(ops.slice_along(z, -1, h_size, 2 * h_size))
            g = ops.tanh(ops.slice_along(z, -1, 2 * h_size, 3 * h_size))
            o = ops.sigmoid(ops.slice_along(z, -1, 3 * h_size, 4 * h_size))
            c = ops.add(ops.mul(f, c), ops.mul(i, g))
            h = ops.mul(o, ops.tanh(c))
            states.append(h)
        return states


class LstmEncoder(TimeSeriesEncoder):
    """
    Stacked LSTM; E'_ts is the final-time hidden state of the last layer.
    """

    variant = "lstm"

    def __init__(
        self,
        input_dim: int,
        hidden: int,
        output_dim: int,
        rng: np.random.Generator,
        layers: int = 1,
        dropout: float = 0.0,
        generator: Optional[np.random.Generator] = None,
    ):
        if layers < 1:
            raise ConfigError(f"LSTM needs at least one layer, got {layers}")
        self.input_dim = input_dim
        self.state_dim = hidden
        self.output_dim = output_dim
        self.layers = [LstmLayer(input_dim if i == 0 else hidden, hidden, rng) for i in range(layers)]
        self.projection = Linear(hidden, output_dim, rng)
        self.dropout = Dropout(dropout, generator)

    def _run(self, x: Tensor) -> List[Tensor]:
        _check_series(x, self.input_dim)
        states = self.layers[0](x)
        for layer in self.layers[1:]:
            states = layer(self.dropout(_stack_time(states)))
        return states

    def sequence(self, x: Tensor) -> Tensor:
        return _stack_time(self._run(x))

    def encode(self, x: Tensor) -> Tensor:
        return self._run(x)[-1]


class CnnEncoder(TimeSeriesEncoder):
    """
    Two 'same'-padded conv1d+ReLU layers followed by global max-pooling over time.
    """

    variant = "cnn"

    def __init__(
        self,
        input_dim: int,
        channels: int,
        output_dim: int,
        rng: np.random.Generator,
        kernel: int = 3,
        dropout: float = 0.0,
        generator: Optional[np.random.Generator] = None,
    ):
        self.input_dim = input_dim
        self.state_dim = channels
        self.output_dim = output_dim
        self.kernel = kernel
        self.weights = []
        self.biases = []
        for layer in range(CNN_LAYERS):
            in_channels = input_dim if layer == 0 else channels
            self.weights.append(xavier_uniform(rng, kernel * in_channels, kernel * channels, shape=(kernel, in_channels, channels)))
            self.biases.append(zeros((channels,)))
        self.projection = Linear(channels, output_dim, rng)
        self.dropout = Dropout(dropout, generator)

    def sequence(self, x: Tensor) -> Tensor:
        _check_series(x, self.input_dim)
        h = x
        for weight, bias in zip(self.weights, self.biases):
            h = ops.relu(ops.add(ops.conv1d(h, weight), bias))
        return h

    def encode(self, x: Tensor) -> Tensor:
        return ops.max_along(self.sequence(x), 1)


class StarCycle(Module):
    """
    Parameters of one Star-Transformer update cycle.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
        generator: Optional[np.random.Generator] = None,
    ):
        self.satellite_attention = MultiHeadAttention(dim, heads, rng, dropout, generator)
        self.satellite_norm = LayerNorm(dim)
        self.relay_attention = MultiHeadAttention(dim, heads, rng, dropout, generator)
        self.relay_norm = LayerNorm(dim)


def _ring_shift(x: Tensor, offset: int) -> Tensor:
    """Neighbor states along time on a ring: offset -1 gives s_{i-1}, +1 gives s_{i+1}."""
    length = x.shape[1]
    if length == 1:
        return x
    if offset < 0:
        return ops.concat([ops.slice_along(x, 1, length - 1, length), ops.slice_along(x, 1, 0, length - 1)], axis=1)
    return ops.concat([ops.slice_along(x, 1, 1, length), ops.slice_along(x, 1, 0, 1)], axis=1)


def star_transformer_cycle(
    satellites: Tensor,
    relay: Tensor,
    token_embeds: Tensor,
    params: StarCycle,
) -> Tuple[Tensor, Tensor]:
    """
    One Star-Transformer update.

    Each satellite attends over {s_{i-1}, s_i, s_{i+1}, e_i, relay} (ring
    neighbors); the relay then attends over itself and all updated satellites.
    Both updates are followed by ReLU and layer norm.

    Args:
        satellites: (B, L, d) satellite states.
        relay: (B, d) relay state.
        token_embeds: (B, L, d) token embeddings.
        params: The cycle's attention and norm parameters.

    Returns:
        Updated (satellites, relay).
    """
    if satellites.ndim != 3 or satellites.shape[1] < 1:
        raise ShapeError("star_transformer_cycle", [satellites.shape], "need (B, L, d) with L >= 1")
    if token_embeds.shape != satellites.shape or relay.shape != (satellites.shape[0], satellites.shape[2]):
        raise ShapeError("star_transformer_cycle", [satellites.shape, relay.shape, token_embeds.shape])

    batch, length, dim = satellites.shape
    relay_row = ops.reshape(relay, (batch, 1, dim))
    relay_per_step = ops.concat([relay_row] * length, axis=1) if length > 1 else relay_row
    members = [_ring_shift(satellites, -1), satellites, _ring_shift(satellites, 1), token_embeds, relay_per_step]
    context = ops.concat([ops.reshape(m, (batch, length, 1, dim)) for m in members], axis=2)
    query = ops.reshape(satellites, (batch, length, 1, dim))

    updated = ops.reshape(params.satellite_attention(query, context), (batch, length, dim))
    updated = params.satellite_norm(ops.relu(updated))

    relay_context = ops.concat([relay_row, updated], axis=1)
    new_relay = ops.reshape(params.relay_attention(relay_row, relay_context), (batch, dim))
    new_relay = params.relay_norm(ops.relu(new_relay))
    return updated, new_relay


def run_star_cycles(
    satellites: Tensor,
    relay: Tensor,
    token_embeds: Tensor,
    cycles: Sequence[StarCycle],
) -> Tuple[Tensor, Tensor]:
    """Apply ``cycles`` in order; zero cycles return the inputs unchanged."""
    for params in cycles:
        satellites, relay = star_transformer_cycle(satellites, relay, token_embeds, params)
    return satellites, relay


class StarTransformerEncoder(TimeSeriesEncoder):
    """
    Star-Transformer; E'_ts is the relay state after the configured cycles.
    """

    variant = "star_transformer"

    def __init__(
        self,
        input_dim: int,
        dim: int,
        output_dim: int,
        rng: np.random.Generator,
        heads: int = 4,
        cycles: int = 2,
        dropout: float = 0.0,
        generator: Optional[np.random.Generator] = None,
    ):
        if dim % heads != 0:
            raise ConfigError(f"Star-Transformer width {dim} is not divisible by {heads} heads")
        self.input_dim = input_dim
        self.state_dim = dim
        self.output_dim = output_dim
        self.embed = Linear(input_dim, dim, rng)
        self.cycles = [StarCycle(dim, heads, rng, dropout, generator) for _ in range(cycles)]
        self.projection = Linear(dim, output_dim, rng)
        self.dropout = Dropout(dropout, generator)

    def _run(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        _check_series(x, self.input_dim)
        embeds = self.embed(x)
        return run_star_cycles(embeds, ops.mean(embeds, axis=1), embeds, self.cycles)

    def sequence(self, x: Tensor) -> Tensor:
        return self._run(x)[0]

    def encode(self, x: Tensor) -> Tensor:
        return self._run(x)[1]


class TransformerTsEncoder(TimeSeriesEncoder):
    """
    Transformer encoder over time steps with learned positions.

    The mean over time of the final-layer states is returned directly as E_ts.
    """

    variant = "transformer_encoder"

    def __init__(
        self,
        input_dim: int,
        dim: int,
        rng: np.random.Generator,
        heads: int = 4,
        layers: int = 1,
        ffn_dim: Optional[int] = None,
        max_length: int = 512,
        dropout: float = 0.0,
        generator: Optional[np.random.Generator] = None,
    ):
        if layers < 1:
            raise ConfigError(f"Transformer encoder needs at least one layer, got {layers}")
        self.input_dim = input_dim
        self.state_dim = dim
        self.output_dim = dim
        self.max_length = max_length
        self.embed = Linear(input_dim, dim, rng)
        self.positions = Embedding(max_length, dim, rng)
        self.layers = [TransformerLayer(dim, heads, ffn_dim or 2 * dim, rng, dropout, generator) for _ in range(layers)]
        self.dropout = Dropout(dropout, generator)

    def sequence(self, x: Tensor) -> Tensor:
        _, length = _check_series(x, self.input_dim)
        if length > self.max_length:
            raise ShapeError("encode_ts", [x.shape], f"length exceeds {self.max_length} positions")
        h = ops.add(self.embed(x), self.positions(np.arange(length)))
        h = self.dropout(h)
        for layer in self.layers:
            h = layer(h)
        return h

    def encode(self, x: Tensor) -> Tensor:
        return ops.mean(self.sequence(x), axis=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.encode(x)


class TextEncoder(Module):
    """
    BERT-architecture encoder over pre-tokenized ids; returns the state at the
    classification token (position 0).
    """

    def __init__(
        self,
        vocab: int,
        dim: int,
        rng: np.random.Generator,
        heads: int = 4,
        layers: int = 2,
        ffn_dim: Optional[int] = None,
        max_positions: int = 512,
        dropout: float = 0.0,
        generator: Optional[np.random.Generator] = None,
        cls_id: int = CLS_ID,
    ):
        if layers < 1:
            raise ConfigError(f"Text encoder needs at least one layer, got {layers}")
        self.vocab = vocab
        self.output_dim = dim
        self.max_positions = max_positions
        self.cls_id = cls_id
        self.tokens = Embedding(vocab, dim, rng)
        self.positions = Embedding(max_positions, dim, rng)
        self.embedding_norm = LayerNorm(dim)
        self.dropout = Dropout(dropout, generator)
        self.layers = [TransformerLayer(dim, heads, ffn_dim or 4 * dim, rng, dropout, generator) for _ in range(layers)]

    def _validate(self, ids: np.ndarray, attention_mask: np.ndarray) -> None:
        if ids.ndim != 2 or ids.shape[1] < 1:
            raise ShapeError("encode_text", [ids.shape], "expected (B, D3) ids")
        if attention_mask.shape != ids.shape:
            raise ShapeError("encode_text", [ids.shape, attention_mask.shape], "mask must match ids")
        if ids.shape[1] > self.max_positions:
            raise ShapeError("encode_text", [ids.shape], f"sequence exceeds {self.max_positions} positions")
        if ids.min() < 0 or ids.max() >= self.vocab:
            raise DataError(f"encode_text: token id out of vocabulary of size {self.vocab}")
        empty = np.flatnonzero(attention_mask.sum(axis=1) == 0)
        if empty.size:
            raise DataError(f"encode_text: rows {empty.tolist()} are fully masked")
        if (ids[:, 0] != self.cls_id).any():
            raise DataError(f"encode_text: every row must start with the classification token {self.cls_id}")

    def sequence(self, ids: np.ndarray, attention_mask: np.ndarray) -> Tensor:
        """
        Final-layer states for every position, (B, D3, d).
        """
        ids = np.asarray(ids)
        attention_mask = np.asarray(attention_mask, dtype=np.float64)
        self._validate(ids, attention_mask)
        h = ops.add(self.tokens(ids), self.positions(np.arange(ids.shape[1])))
        h = self.dropout(self.embedding_norm(h))
        for layer in self.layers:
            h = layer(h, key_mask=attention_mask)
        return h

    def forward(self, ids: np.ndarray, attention_mask: np.ndarray) -> Tensor:
        states = self.sequence(ids, attention_mask)
        batch, _, dim = states.shape
        return ops.reshape(ops.slice_along(states, 1, 0, 1), (batch, dim))


def build_ts_encoder(
    variant: str,
    input_dim: int,
    rng: np.random.Generator,
    hidden: int,
    output_dim: int,
    layers: int = 1,
    heads: int = 4,
    cycles: int = 2,
    ffn_dim: Optional[int] = None,
    max_length: int = 512,
    kernel: int = 3,
    dropout: float = 0.0,
    generator: Optional[np.random.Generator] = None,
) -> TimeSeriesEncoder:
    """
    Construct a time-series encoder by variant name.

    Raises:
        ConfigError: If the variant is unknown.
    """
    if variant == "lstm":
        return LstmEncoder(input_dim, hidden, output_dim, rng, layers, dropout, generator)
    if variant == "cnn":
        return CnnEncoder(input_dim, hidden, output_dim, rng, kernel, dropout, generator)
    if variant == "star_transformer":
        return StarTransformerEncoder(input_dim, hidden, output_dim, rng, heads, cycles, dropout, generator)
    if variant == "transformer_encoder":
        return TransformerTsEncoder(input_dim, hidden, rng, heads, layers, ffn_dim, max_length, dropout, generator)
    raise ConfigError(f"Unknown time-series encoder '{variant}'; valid: {', '.join(TS_VARIANTS)}")


def encode_ti(i_ti: Tensor, params: TiEncoder) -> Tensor:
    """E_ti = ReLU(I_ti W + b)."""
    return params(i_ti)


def encode_ts(i_ts: Tensor, params: TimeSeriesEncoder) -> Tensor:
    """E_ts for the encoder's variant."""
    if params.variant not in TS_VARIANTS:
        raise ConfigError(f"Unknown time-series encoder '{params.variant}'")
    return params(i_ts)


def encode_text(i_nt: np.ndarray, attention_mask: np.ndarray, params: TextEncoder) -> Tensor:
    """E_nt: classification-token state of the text encoder."""
    return params(i_nt, attention_mask)
