#!/usr/bin/env python3
"""
Synthetic EHR-shaped dataset generator.

Labels come from a logistic model over planted latent factors. Each factor is
embedded into every modality whose signal strength is positive: as a linear
feature direction (time-invariant), as the amplitude of a temporal motif
(time series), or as the number of signature tokens from a sign-specific group
(notes). All modalities also receive distractor noise.
"""

import logging
import math
from typing import Dict, List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from core.errors import ConfigError
from dataset.io import CLS_ID, Dataset, DatasetHeader, Sample
from engine.rng import RngState

logger = logging.getLogger(__name__)

MODALITIES = ("time_invariant", "time_series", "notes")

# Scale of a planted factor relative to unit noise at strength 1.
SIGNAL_GAIN = 2.0
# Signature tokens per unit |z| at strength 1.
SIGNATURE_RATE = 3.0
QUADRATURE_POINTS = 64
FIRST_SIGNATURE_ID = 2

# RngState.fold_in keys, one per independent stream.
LATENT_STREAM = 1
LABEL_WEIGHT_STREAM = 2
TI_STREAM = 3
TS_STREAM = 4
NOTES_STREAM = 5
LABEL_DRAW_STREAM = 6
DESIGN_STREAM = 7


class GeneratorSpec(BaseModel):
    """Parameters of a synthetic dataset."""

    seed: int = Field(0, ge=0, description="Root seed")
    n_samples: int = Field(..., ge=1, description="Number of samples")
    task: Literal["binary", "multilabel"] = Field("binary", description="Label task")
    d1: int = Field(..., ge=1, description="Time-invariant feature count")
    l: int = Field(..., ge=1, description="Time steps per series")
    d2: int = Field(..., ge=1, description="Time-series feature count")
    d3_min: int = Field(..., ge=2, description="Shortest note length, including the classification token")
    d3_max: int = Field(..., ge=2, description="Longest note length, including the classification token")
    vocab: int = Field(..., description="Vocabulary size, including pad and classification tokens")
    n_labels: int = Field(1, ge=1, description="Label-space size (1 for binary)")
    n_factors: int = Field(2, ge=1, description="Number of latent factors")
    signal: Dict[str, float] = Field(..., description="Signal strength in [0, 1] per modality")
    positive_rate: float = Field(0.3, gt=0.0, lt=1.0, description="Target prior of each label")
    label_sharpness: float = Field(8.0, gt=0.0, description="Slope of the logistic label model")
    noise: float = Field(1.0, ge=0.0, description="Standard deviation of distractor noise")
    signature_group_size: int = Field(4, ge=1, description="Tokens per signature group")

    @model_validator(mode="after")
    def _check(self) -> "GeneratorSpec":
        if self.d3_max < self.d3_min:
            raise ValueError(f"d3_max ({self.d3_max}) must be >= d3_min ({self.d3_min})")
        if self.task == "binary" and self.n_labels != 1:
            raise ValueError("binary task requires n_labels = 1")
        if not self.signal:
            raise ValueError("at least one modality must carry signal")
        for name, strength in self.signal.items():
            if name not in MODALITIES:
                raise ValueError(f"unknown modality '{name}' in signal; valid: {', '.join(MODALITIES)}")
            if not 0.0 <= strength <= 1.0:
                raise ValueError(f"signal strength for '{name}' must be in [0, 1], got {strength}")
        needed = self.first_distractor_id + 1
        if self.vocab < needed:
            raise ValueError(f"vocab must be at least {needed} for {self.n_factors} factors")
        return self

    @property
    def first_distractor_id(self) -> int:
        return FIRST_SIGNATURE_ID + 2 * self.n_factors * self.signature_group_size

    def strength(self, modality: str) -> float:
        return float(self.signal.get(modality, 0.0))


def _expected_positive_rate(intercept: float, sharpness: float) -> float:
    """E[sigmoid(sharpness * s + intercept)] for s ~ N(0, 1) by Gauss-Hermite quadrature."""
    nodes, weights = np.polynomial.hermite.hermgauss(QUADRATURE_POINTS)
    z = math.sqrt(2.0) * nodes
    logits = sharpness * z + intercept
    values = 0.5 * (1.0 + np.tanh(0.5 * logits))
    return float(np.sum(weights * values) / math.sqrt(math.pi))


def calibrate_intercept(positive_rate: float, sharpness: float, tolerance: float = 1e-10) -> float:
    """
    Intercept b such that the expected positive rate of the label model equals ``positive_rate``.
    """
    low, high = -50.0 * (1.0 + sharpness), 50.0 * (1.0 + sharpness)
    while high - low > tolerance:
        middle = 0.5 * (low + high)
        if _expected_positive_rate(middle, sharpness) < positive_rate:
            low = middle
        else:
            high = middle
    return 0.5 * (low + high)


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    return matrix / np.where(norms > 0, norms, 1.0)


def _labels(spec: GeneratorSpec, latent: np.ndarray, root: RngState) -> List:
    n_outputs = 1 if spec.task == "binary" else spec.n_labels
    directions = _unit_rows(root.fold_in(LABEL_WEIGHT_STREAM).generator().normal(size=(n_outputs, spec.n_factors)))
    intercept = calibrate_intercept(spec.positive_rate, spec.label_sharpness)
    logits = spec.label_sharpness * latent @ directions.T + intercept
    probabilities = 0.5 * (1.0 + np.tanh(0.5 * logits))
    draws = root.fold_in(LABEL_DRAW_STREAM).generator().random(probabilities.shape) < probabilities
    if spec.task == "binary":
        return [int(v) for v in draws[:, 0]]
    return [[int(i) for i in np.flatnonzero(row)] for row in draws]


def _time_invariant(spec: GeneratorSpec, latent: np.ndarray, design: np.random.Generator, root: RngState) -> np.ndarray:
    loadings = design.normal(size=(spec.n_factors, spec.d1)) / math.sqrt(spec.n_factors)
    noise = root.fold_in(TI_STREAM).generator().normal(size=(spec.n_samples, spec.d1))
    return spec.noise * noise + spec.strength("time_invariant") * SIGNAL_GAIN * latent @ loadings


def _time_series(spec: GeneratorSpec, latent: np.ndarray, design: np.random.Generator, root: RngState) -> np.ndarray:
    t = (np.arange(spec.l) + 0.5) / spec.l
    motifs = np.stack([np.sin(math.pi * (k + 1) * t) for k in range(spec.n_factors)])
    patterns = _unit_rows(design.normal(size=(spec.n_factors, spec.d2))) * math.sqrt(spec.d2)
    noise = root.fold_in(TS_STREAM).generator().normal(size=(spec.n_samples, spec.l, spec.d2))
    planted = np.einsum("nk,kt,kd->ntd", latent, motifs, patterns)
    return spec.noise * noise + spec.strength("time_series") * SIGNAL_GAIN * planted


def signature_group(spec: GeneratorSpec, factor: int, positive: bool) -> Tuple[int, int]:
    """Token id range [start, stop) of a factor's positive or negative signature group."""
    start = FIRST_SIGNATURE_ID + (2 * factor + (0 if positive else 1)) * spec.signature_group_size
    return start, start + spec.signature_group_size


def _notes(spec: GeneratorSpec, latent: np.ndarray, root: RngState) -> List[List[int]]:
    rng = root.fold_in(NOTES_STREAM).generator()
    strength = spec.strength("notes")
    notes = []
    for row in latent:
        length = int(rng.integers(spec.d3_min, spec.d3_max + 1))
        body = rng.integers(spec.first_distractor_id, spec.vocab, size=length - 1)
        slots = rng.permutation(length - 1)
        used = 0
        for factor, value in enumerate(row):
            count = min(int(round(strength * abs(value) * SIGNATURE_RATE)), len(slots) - used)
            if count <= 0:
                continue
            start, stop = signature_group(spec, factor, value >= 0)
            body[slots[used:used + count]] = rng.integers(start, stop, size=count)
            used += count
        notes.append([CLS_ID] + [int(t) for t in body])
    return notes


def generate(spec: GeneratorSpec) -> Dataset:
    """
    Generate a dataset deterministically from ``spec``.

    Args:
        spec: Generator parameters.

    Returns:
        The dataset, samples numbered 0..n_samples-1.
    """
    root = RngState(spec.seed)
    latent = root.fold_in(LATENT_STREAM).generator().normal(size=(spec.n_samples, spec.n_factors))
    design = root.fold_in(DESIGN_STREAM).generator()

    ti = _time_invariant(spec, latent, design, root)
    ts = _time_series(spec, latent, design, root)
    notes = _notes(spec, latent, root)
    labels = _labels(spec, latent, root)

    header = DatasetHeader(
        task=spec.task,
        d1=spec.d1,
        l=spec.l,
        d2=spec.d2,
        d3_max=spec.d3_max,
        vocab=spec.vocab,
        n_labels=spec.n_labels,
        n_samples=spec.n_samples,
    )
    samples = [
        Sample(id=i, ti=ti[i], ts=ts[i], note_ids=notes[i], labels=labels[i])
        for i in range(spec.n_samples)
    ]
    strengths = ", ".join(f"{m}={spec.strength(m)}" for m in MODALITIES)
    logger.info(f"Generated {spec.n_samples} {spec.task} samples (signal: {strengths})")
    return Dataset(header=header, samples=samples)


def load_generator_spec(data: Dict) -> GeneratorSpec:
    """
    Validate a generator spec mapping.

    Raises:
        ConfigError: If the mapping is not a valid spec.
    """
    try:
        return GeneratorSpec(**data)
    except ValidationError as e:
        raise ConfigError(f"Invalid generator spec: {e}")
