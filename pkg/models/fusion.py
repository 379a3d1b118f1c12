#!/usr/bin/env python3
"""
Fusion strategies.

The attention gate shifts the main modality's representation by a gated,
norm-capped displacement built from the auxiliary modalities. Early fusion,
tensor fusion and attention fusion are the alternative strategies.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from core.errors import ConfigError, ShapeError
from engine import ops
from engine.nn import Linear, Module
from engine.tensor import Tensor, is_grad_enabled
from models.attention import MultiHeadAttention

logger = logging.getLogger(__name__)

MAIN_MODALITIES = ("notes", "time_series")


@dataclass
class EncodedTriple:
    """
    Encoded representations of one batch plus the selected main modality.
    """

    e_ti: Tensor
    e_ts: Tensor
    e_nt: Tensor
    main: str = "notes"

    def __post_init__(self):
        if self.main not in MAIN_MODALITIES:
            raise ConfigError(f"main modality must be one of {MAIN_MODALITIES}, got '{self.main}'")
        shapes = [self.e_ti.shape, self.e_ts.shape, self.e_nt.shape]
        if any(len(s) != 2 for s in shapes) or len({s[0] for s in shapes}) != 1:
            raise ShapeError("encoded_triple", shapes, "expected (B, D) matrices with a common batch size")

    def roles(self) -> Tuple[Tensor, Tensor]:
        """(main, auxiliary) representations; the time-invariant one is always auxiliary."""
        if self.main == "notes":
            return self.e_nt, self.e_ts
        return self.e_ts, self.e_nt


class AttentionGate(Module):
    """
    Gating parameters: two scalar gates, the displacement projection and beta.

    The same parameter blocks serve either main modality; only the roles of
    the inputs change.
    """

    def __init__(self, main_dim: int, ti_dim: int, aux_dim: int, rng: np.random.Generator):
        self.main_dim = main_dim
        self.ti_dim = ti_dim
        self.aux_dim = aux_dim
        self.gate_ti = Linear(main_dim + ti_dim, 1, rng)
        self.gate_aux = Linear(main_dim + aux_dim, 1, rng)
        self.displacement = Linear(ti_dim + aux_dim, main_dim, rng)
        self.beta = Tensor(rng.uniform(0.0, 1.0, size=(1,)), requires_grad=True)
        self._last: Dict[str, np.ndarray] = {}

    @property
    def last_gates(self) -> Dict[str, np.ndarray]:
        """
        g1, g2 and alpha from the most recent forward pass recorded with gradients
        on, one value per row. Passes under no_grad leave it untouched, so
        concurrent evaluation threads never write it.
        """
        return self._last

    def forward(self, triple: EncodedTriple) -> Tensor:
        return attention_gate(triple, self)


def attention_gate(triple: EncodedTriple, params: AttentionGate) -> Tensor:
    """
    Fuse an encoded triple into the main modality's space.

    g1 = ReLU(W_g1 [main; ti] + b_g1) and g2 = ReLU(W_g2 [main; aux] + b_g2) are
    per-row scalars, H = W_H [g1 * ti; g2 * aux] + b_H,
    alpha = min(||main|| / ||H|| * beta, 1) and M = main + alpha * H.
    Rows with ||H|| = 0 or ||main|| = 0 get alpha = 0.

    Args:
        triple: Encoded inputs with the main modality selected.
        params: Gate parameters sized for this main modality.

    Returns:
        M with the main modality's width.

    Raises:
        ShapeError: If the triple does not match the parameter widths.
    """
    main, aux = triple.roles()
    ti = triple.e_ti
    if main.shape[1] != params.main_dim or ti.shape[1] != params.ti_dim or aux.shape[1] != params.aux_dim:
        raise ShapeError(
            "attention_gate",
            [main.shape, ti.shape, aux.shape],
            f"expected widths main={params.main_dim} ti={params.ti_dim} aux={params.aux_dim}",
        )

    g1 = ops.relu(params.gate_ti(ops.concat([main, ti])))
    g2 = ops.relu(params.gate_aux(ops.concat([main, aux])))
    h = params.displacement(ops.concat([ops.mul(g1, ti), ops.mul(g2, aux)]))

    main_norm = ops.l2_norm(main, axis=-1, keepdims=True)
    h_norm = ops.l2_norm(h, axis=-1, keepdims=True)
    ratio = ops.exp(ops.subtract(ops.log(main_norm), ops.log(h_norm)))
    guard = Tensor(((h_norm.data > 0.0) & (main_norm.data > 0.0)).astype(np.float64))
    alpha = ops.mul(ops.relu(ops.scalar_min(ops.mul(ratio, params.beta), 1.0)), guard)

    if is_grad_enabled():
        params._last = {
            "g1": g1.data[:, 0].copy(),
            "g2": g2.data[:, 0].copy(),
            "alpha": alpha.data[:, 0].copy(),
        }
    return ops.add(main, ops.mul(alpha, h))


def early_fuse(i_ti: Tensor, i_ts: Tensor) -> Tensor:
    """
    Repeat the time-invariant vector at every time step and append it before the series.

    Args:
        i_ti: (B, D1).
        i_ts: (B, L, D2).

    Returns:
        (B, L, D1 + D2) with columns [0, D1) equal to ``i_ti`` at every step.
    """
    if i_ti.ndim != 2 or i_ts.ndim != 3 or i_ti.shape[0] != i_ts.shape[0]:
        raise ShapeError("early_fuse", [i_ti.shape, i_ts.shape])
    batch, length, _ = i_ts.shape
    row = ops.reshape(i_ti, (batch, 1, i_ti.shape[1]))
    repeated = ops.concat([row] * length, axis=1) if length > 1 else row
    return ops.concat([repeated, i_ts])


class TensorFusion(Module):
    """
    Projection applied to the flattened per-row outer product.
    """

    def __init__(self, a_dim: int, b_dim: int, output_dim: int, rng: np.random.Generator):
        self.a_dim = a_dim
        self.b_dim = b_dim
        self.output_dim = output_dim
        self.projection = Linear(a_dim * b_dim, output_dim, rng)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        return tensor_fuse(a, b, self.projection)


def tensor_fuse(a: Tensor, b: Tensor, proj: Linear) -> Tensor:
    """Linear(flatten(outer(a_i, b_i))) per row."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] * b.shape[1] != proj.in_features:
        raise ShapeError("tensor_fuse", [a.shape, b.shape, proj.weight.shape])
    outer = ops.outer_product(a, b)
    return proj(ops.reshape(outer, (a.shape[0], a.shape[1] * b.shape[1])))


class AttentionFusion(Module):
    """
    Cross-attention fusion: queries from the auxiliary sequence, keys and values
    from the main sequence, both first projected to a common width.
    """

    def __init__(
        self,
        main_dim: int,
        aux_dim: int,
        width: int,
        heads: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
        generator: Optional[np.random.Generator] = None,
    ):
        self.output_dim = width
        self.main_projection = Linear(main_dim, width, rng)
        self.aux_projection = Linear(aux_dim, width, rng)
        self.attention = MultiHeadAttention(width, heads, rng, dropout, generator)

    def forward(
        self,
        main_seq: Tensor,
        aux_seq: Tensor,
        main_mask: Optional[np.ndarray] = None,
        aux_mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        return attention_fuse(
            self.main_projection(main_seq),
            self.aux_projection(aux_seq),
            self.attention,
            main_mask,
            aux_mask,
        )


def attention_fuse(
    main_seq: Tensor,
    aux_seq: Tensor,
    params: MultiHeadAttention,
    main_mask: Optional[np.ndarray] = None,
    aux_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Attend from every auxiliary position over the main sequence and mean-pool.

    Args:
        main_seq: (B, Lm, d) keys and values.
        aux_seq: (B, La, d) queries.
        params: Attention block of width d.
        main_mask: Optional (B, Lm) 0/1 mask over main positions.
        aux_mask: Optional (B, La) 0/1 mask; masked query rows are left out of the pooling.

    Returns:
        (B, d).
    """
    if main_seq.ndim != 3 or aux_seq.ndim != 3 or main_seq.shape[0] != aux_seq.shape[0]:
        raise ShapeError("attention_fuse", [main_seq.shape, aux_seq.shape])
    attended = params(aux_seq, main_seq, key_mask=main_mask)
    if aux_mask is None:
        return ops.mean(attended, axis=1)
    weights = np.asarray(aux_mask, dtype=np.float64)
    counts = weights.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        raise ShapeError("attention_fuse", [aux_seq.shape, weights.shape], "a query row is fully masked")
    pooling = Tensor((weights / counts)[:, :, None])
    return ops.sum_along(ops.mul(attended, pooling), 1)
