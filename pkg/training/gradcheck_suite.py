#!/usr/bin/env python3
"""
The full finite-difference suite: every primitive plus one toy model graph per
fusion strategy and time-series encoder.

Model graphs are checked at a point where the loss is smooth: ReLU-capped
encodings have no all-zero rows, attention gates are open and alpha sits below
its cap. Freshly initialized gated models often violate this (zero biases give
H = 0 exactly), so biases are moved before checking.
"""

import logging
from typing import List, Sequence

import numpy as np

from core.errors import GraphError
from dataset.batching import SampleBatch, make_batch
from dataset.generator import GeneratorSpec, generate
from dataset.io import Dataset
from engine.gradcheck import DEFAULT_TOLERANCE, GradCheckResult, check_primitives, grad_check
from engine.tensor import Tensor, reset_graph
from models.fusion import AttentionGate, TensorFusion, early_fuse
from models.registry import FusionModel, build_model
from training.config import ModelConfig

logger = logging.getLogger(__name__)

MODEL_CASES = (
    "Ti",
    "Bert",
    "Encoder",
    "F-Lstm",
    "LstmBert",
    "BertStar",
    "CnnBert[TF]",
    "BertEncoder[AT]",
)
ENTRIES_PER_PARAMETER = 3
BATCH_SIZE = 2
# A key bias shifts all scores of a query equally, which softmax cancels: its
# gradient is exactly zero and its finite difference is pure roundoff.
SHIFT_INVARIANT_SUFFIX = "key.bias"

# Bias ranges of the moved point.
OPEN_BIAS = (0.5, 1.0)
GATE_BIAS = 5.0
GATE_BETA = 0.05
ALPHA_CEILING = 0.9

TOY_DIMS = {
    "ti_dim": 6,
    "ts_hidden": 8,
    "ts_out": 6,
    "ts_heads": 2,
    "ts_cycles": 1,
    "ts_ffn": 12,
    "text_width": 8,
    "text_layers": 1,
    "text_heads": 2,
    "text_ffn": 12,
    "max_positions": 16,
    "fusion_width": 8,
    "fusion_heads": 2,
    "dropout": 0.0,
}


def toy_dataset(seed: int = 3) -> Dataset:
    spec = GeneratorSpec(
        seed=seed,
        n_samples=BATCH_SIZE,
        task="binary",
        d1=3,
        l=4,
        d2=3,
        d3_min=4,
        d3_max=6,
        vocab=30,
        signal={"time_invariant": 1.0, "time_series": 1.0, "notes": 1.0},
    )
    return generate(spec)


def move_to_valid_point(model: FusionModel, seed: int = 0) -> None:
    """
    Set biases so the model's loss is smooth around the current parameters.

    The Ti encoder and the projected time-series encoders end in a ReLU; their
    biases become positive. Attention gates get open scalar gates, a nonzero
    displacement bias and a small beta. Tensor fusion gets a nonzero projection
    bias.
    """
    rng = np.random.default_rng(seed)
    layers = []
    if model.ti_encoder is not None:
        layers.append(model.ti_encoder.linear)
    projection = getattr(model.ts_encoder, "projection", None)
    if projection is not None:
        layers.append(projection)
    if isinstance(model.fusion, AttentionGate):
        model.fusion.gate_ti.bias.data[:] = GATE_BIAS
        model.fusion.gate_aux.bias.data[:] = GATE_BIAS
        model.fusion.beta.data[:] = GATE_BETA
        layers.append(model.fusion.displacement)
    if isinstance(model.fusion, TensorFusion):
        layers.append(model.fusion.projection)
    for layer in layers:
        layer.bias.data[:] = rng.uniform(*OPEN_BIAS, size=layer.bias.shape)


def _has_zero_row(encoded: Tensor) -> bool:
    return bool((~encoded.data.any(axis=-1)).any())


def valid_point_violations(model: FusionModel, batch_: SampleBatch) -> List[str]:
    """
    Smoothness conditions of the finite-difference check that fail for ``batch_``.
    """
    problems = []
    ti = Tensor(batch_.ti)
    ts = Tensor(batch_.ts)
    fusion = model.spec.fusion
    if model.ti_encoder is not None and _has_zero_row(model.ti_encoder(ti)):
        problems.append("time-invariant encoding has an all-zero row")
    if model.ts_encoder is not None and fusion != "attention":
        inputs = ts if fusion in ("none", "attention_gate") else early_fuse(ti, ts)
        if _has_zero_row(model.ts_encoder(inputs)):
            problems.append("time-series encoding has an all-zero row")
    if isinstance(model.fusion, AttentionGate):
        model.represent(batch_)
        gates = model.fusion.last_gates
        if not ((gates["g1"] > 0).all() and (gates["g2"] > 0).all()):
            problems.append("a scalar gate is closed")
        if not ((gates["alpha"] > 0).all() and (gates["alpha"] < ALPHA_CEILING).all()):
            problems.append("alpha is zero or at its cap")
    reset_graph()
    return problems


def check_model(name: str, dataset: Dataset, tolerance: float = DEFAULT_TOLERANCE, seed: int = 0) -> GradCheckResult:
    """
    Finite-difference check of the loss of a toy-sized registry model w.r.t. all its parameters.

    Raises:
        GraphError: If the moved point still violates a smoothness condition.
    """
    config = ModelConfig(model_name=name, seed=seed, **TOY_DIMS).bind_dataset(dataset.header)
    model = build_model(config).eval()
    batch_ = make_batch(dataset.samples[:BATCH_SIZE], config.label_task, config.n_labels)
    move_to_valid_point(model, seed)
    problems = valid_point_violations(model, batch_)
    if problems:
        raise GraphError(f"gradcheck {name}: not a smooth point: {'; '.join(problems)}")
    params = [p for key, p in model.named_parameters().items() if not key.endswith(SHIFT_INVARIANT_SUFFIX)]
    error = grad_check(
        lambda *_: model.loss(batch_)[1],
        params,
        max_entries_per_input=ENTRIES_PER_PARAMETER,
        seed=seed,
    )
    logger.debug(f"gradcheck {name}: max relative error {error:.3e} over {len(params)} parameters")
    return GradCheckResult(name=f"model:{name}", max_relative_error=error, tolerance=tolerance)


def run_suite(tolerance: float = DEFAULT_TOLERANCE, models: Sequence[str] = MODEL_CASES) -> List[GradCheckResult]:
    """
    Run the primitive checks followed by the model-graph checks.
    """
    results = check_primitives(tolerance)
    dataset = toy_dataset()
    for name in models:
        results.append(check_model(name, dataset, tolerance))
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"Gradient check failed for: {', '.join(failed)}")
    else:
        logger.info(f"All {len(results)} gradient checks passed")
    return results
