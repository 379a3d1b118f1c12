#!/usr/bin/env python3
"""
Adam with bias correction, plus global-norm gradient clipping.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from core.errors import NonFiniteGradientError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """
    Per-parameter first/second moments keyed by parameter name.
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)


def _check_finite(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], step: int) -> None:
    for name, param in params.items():
        if name not in grads:
            raise ShapeError("adam_step", [param.shape], f"missing gradient for '{name}'")
        grad = grads[name]
        if grad.shape != param.shape:
            raise ShapeError("adam_step", [param.shape, grad.shape], f"gradient shape for '{name}'")
        finite = np.isfinite(grad)
        if not finite.all():
            diagnostics = {
                "step": step + 1,
                "nan_count": int(np.isnan(grad).sum()),
                "inf_count": int(np.isinf(grad).sum()),
                "shape": param.shape,
            }
            logger.error(f"Non-finite gradient for '{name}' at step {step + 1}")
            raise NonFiniteGradientError(name, diagnostics)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState) -> None:
    """
    Apply one bias-corrected Adam update in place.

    Every gradient is checked before any parameter or moment changes, so a
    failed step leaves params and state untouched.

    Args:
        params: Parameter name -> buffer, updated in place.
        grads: Parameter name -> gradient of the same shape.
        state: Optimizer state, updated in place.

    Raises:
        NonFiniteGradientError: If a gradient holds NaN or Inf.
        ShapeError: If a gradient is missing or mis-shaped.
    """
    _check_finite(params, grads, state.step)

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = state.lr / bc1

    for name, param in params.items():
        g = grads[name]
        if name not in state.first:
            state.first[name] = np.zeros_like(param)
            state.second[name] = np.zeros_like(param)
        m = state.first[name]
        v = state.second[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        param -= step_size * m / (np.sqrt(v / bc2) + state.eps)


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: Optional[float]) -> float:
    """
    Scale all gradients in place so their global L2 norm is at most ``max_norm``.

    Returns:
        The norm before clipping.
    """
    norm = global_norm(grads)
    if max_norm is not None and math.isfinite(norm) and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
        logger.debug(f"Clipped gradient norm {norm:.4g} to {max_norm}")
    return norm
