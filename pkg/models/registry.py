#!/usr/bin/env python3
"""
Named model registry and model assembly.

Pair names put the main modality's encoder first: ``LstmBert`` keeps the time
series as main modality, ``BertLstm`` the clinical notes. ``[TF]`` and ``[AT]``
suffixes select tensor fusion and attention fusion after an early fusion of the
time-invariant and time-series inputs.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

import numpy as np

from core.errors import ConfigError
from engine.nn import Dropout, Linear, Module
from engine.rng import RngState
from engine.tensor import Tensor
from models.encoders import TextEncoder, TiEncoder, TimeSeriesEncoder, build_ts_encoder
from models.fusion import (
    AttentionFusion,
    AttentionGate,
    EncodedTriple,
    TensorFusion,
    early_fuse,
)
from models.heads import bce_loss, predict_binary, predict_multilabel

if TYPE_CHECKING:
    from dataset.batching import SampleBatch
    from training.config import ModelConfig

logger = logging.getLogger(__name__)

FUSIONS = ("attention_gate", "tensor", "attention", "early", "none")

ENCODER_NAMES: Dict[str, str] = {
    "Lstm": "lstm",
    "Cnn": "cnn",
    "Star": "star_transformer",
    "Encoder": "transformer_encoder",
}

# RngState.fold_in keys for the independent streams a model draws from.
INIT_STREAM = 1
DROPOUT_STREAM = 2


@dataclass(frozen=True)
class ModelSpec:
    """
    Static description of a registry entry.
    """

    name: str
    modalities: Tuple[str, ...]
    fusion: str
    ts_encoder: Optional[str] = None
    main: Optional[str] = None


def _build_registry() -> Dict[str, ModelSpec]:
    specs = [
        ModelSpec("Ti", ("time_invariant",), "none"),
        ModelSpec("Bert", ("notes",), "none"),
    ]
    for short, variant in ENCODER_NAMES.items():
        specs.append(ModelSpec(short, ("time_series",), "none", ts_encoder=variant))
    for short, variant in ENCODER_NAMES.items():
        specs.append(ModelSpec(f"F-{short}", ("time_invariant", "time_series"), "early", ts_encoder=variant))
    all_three = ("time_invariant", "time_series", "notes")
    for short, variant in ENCODER_NAMES.items():
        for name, main in ((f"{short}Bert", "time_series"), (f"Bert{short}", "notes")):
            specs.append(ModelSpec(name, all_three, "attention_gate", ts_encoder=variant, main=main))
            specs.append(ModelSpec(f"{name}[TF]", all_three, "tensor", ts_encoder=variant, main=main))
            specs.append(ModelSpec(f"{name}[AT]", all_three, "attention", ts_encoder=variant, main=main))
    return {spec.name: spec for spec in specs}


REGISTRY: Dict[str, ModelSpec] = _build_registry()


def list_models() -> List[str]:
    """Registry names in registration order."""
    return list(REGISTRY)


def resolve_spec(name: str) -> ModelSpec:
    """
    Look up a registry entry.

    Raises:
        ConfigError: If ``name`` is unknown; the message lists the valid names.
    """
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError(f"Unknown model '{name}'; valid models: {', '.join(REGISTRY)}")


class FusionModel(Module):
    """
    Encoders, fusion and prediction head for one registry entry.
    """

    def __init__(self, spec: ModelSpec, config: "ModelConfig"):
        for field in ("d1", "l", "d2", "vocab", "n_labels"):
            if getattr(config, field) is None:
                raise ConfigError(f"Model '{spec.name}' needs '{field}'; bind the config to a dataset first")

        self.spec = spec
        self.binary = config.label_task == "binary"
        rng = RngState(config.seed).fold_in(INIT_STREAM).generator()
        self._dropout_generator = RngState(config.seed).fold_in(DROPOUT_STREAM).generator()
        generator = self._dropout_generator
        p = config.dropout

        self.ti_encoder: Optional[TiEncoder] = None
        self.ts_encoder: Optional[TimeSeriesEncoder] = None
        self.text_encoder: Optional[TextEncoder] = None
        self.fusion: Optional[Module] = None

        uses_ti = "time_invariant" in spec.modalities
        early_inputs = spec.fusion in ("early", "tensor", "attention")
        if uses_ti and not early_inputs:
            self.ti_encoder = TiEncoder(config.d1, config.ti_dim, rng)
        if spec.ts_encoder is not None:
            input_dim = config.d1 + config.d2 if early_inputs else config.d2
            self.ts_encoder = build_ts_encoder(
                spec.ts_encoder,
                input_dim,
                rng,
                hidden=config.ts_hidden,
                output_dim=config.ts_out,
                layers=config.ts_layers,
                heads=config.ts_heads,
                cycles=config.ts_cycles,
                ffn_dim=config.ts_ffn,
                max_length=max(config.l, 1),
                kernel=config.cnn_kernel,
                dropout=p,
                generator=generator,
            )
        if "notes" in spec.modalities:
            self.text_encoder = TextEncoder(
                config.vocab,
                config.text_width,
                rng,
                heads=config.text_heads,
                layers=config.text_layers,
                ffn_dim=config.text_ffn,
                max_positions=config.max_positions,
                dropout=p,
                generator=generator,
            )

        width = self._build_fusion(spec, config, rng, generator)
        self.representation_dim = width
        self.head_dropout = Dropout(p, generator)
        self.head = Linear(width, 1 if self.binary else config.n_labels, rng)

    def _build_fusion(self, spec: ModelSpec, config: "ModelConfig", rng: np.random.Generator, generator) -> int:
        if spec.fusion in ("none", "early"):
            if self.ti_encoder is not None:
                return self.ti_encoder.output_dim
            if self.ts_encoder is not None:
                return self.ts_encoder.output_dim
            return self.text_encoder.output_dim

        ts_dim = self.ts_encoder.output_dim
        text_dim = self.text_encoder.output_dim
        main_dim, aux_dim = (text_dim, ts_dim) if spec.main == "notes" else (ts_dim, text_dim)
        if spec.fusion == "attention_gate":
            self.fusion = AttentionGate(main_dim, self.ti_encoder.output_dim, aux_dim, rng)
            return main_dim
        if spec.fusion == "tensor":
            self.fusion = TensorFusion(main_dim, aux_dim, config.fusion_width, rng)
            return config.fusion_width

        ts_state = self.ts_encoder.state_dim
        seq_main, seq_aux = (text_dim, ts_state) if spec.main == "notes" else (ts_state, text_dim)
        self.fusion = AttentionFusion(seq_main, seq_aux, config.fusion_width, config.fusion_heads, rng, config.dropout, generator)
        return config.fusion_width

    def represent(self, batch: "SampleBatch") -> Tensor:
        """
        The fused representation M fed to the prediction head.
        """
        spec = self.spec
        ti = Tensor(batch.ti)
        ts = Tensor(batch.ts)

        if spec.fusion == "none":
            if self.ti_encoder is not None:
                return self.ti_encoder(ti)
            if self.ts_encoder is not None:
                return self.ts_encoder(ts)
            return self.text_encoder(batch.note_ids, batch.attention_mask)

        if spec.fusion == "early":
            return self.ts_encoder(early_fuse(ti, ts))

        if spec.fusion == "attention_gate":
            triple = EncodedTriple(
                e_ti=self.ti_encoder(ti),
                e_ts=self.ts_encoder(ts),
                e_nt=self.text_encoder(batch.note_ids, batch.attention_mask),
                main=spec.main,
            )
            return self.fusion(triple)

        fused_inputs = early_fuse(ti, ts)
        if spec.fusion == "tensor":
            e_t = self.ts_encoder(fused_inputs)
            e_nt = self.text_encoder(batch.note_ids, batch.attention_mask)
            main, aux = (e_nt, e_t) if spec.main == "notes" else (e_t, e_nt)
            return self.fusion(main, aux)

        ts_seq = self.ts_encoder.sequence(fused_inputs)
        text_seq = self.text_encoder.sequence(batch.note_ids, batch.attention_mask)
        if spec.main == "notes":
            return self.fusion(text_seq, ts_seq, main_mask=batch.attention_mask)
        return self.fusion(ts_seq, text_seq, aux_mask=batch.attention_mask)

    def forward(self, batch: "SampleBatch") -> Tensor:
        """Predicted probabilities: (B,) for binary tasks, (B, N) for multilabel."""
        m = self.head_dropout(self.represent(batch))
        if self.binary:
            return predict_binary(m, self.head)
        return predict_multilabel(m, self.head)

    def loss(self, batch: "SampleBatch") -> Tuple[Tensor, Tensor]:
        """(predictions, cross-entropy loss) for a batch."""
        pred = self.forward(batch)
        return pred, bce_loss(pred, batch.labels)


def build_model(config: "ModelConfig") -> FusionModel:
    """
    Construct the registry model named by ``config.model_name``.

    Raises:
        ConfigError: If the name is unknown or the config is not bound to dataset dimensions.
    """
    spec = resolve_spec(config.model_name)
    model = FusionModel(spec, config)
    logger.debug(f"Built {spec.name} ({spec.fusion}, main={spec.main})")
    return model


def main_modality_of(name: str) -> Optional[str]:
    """Main modality implied by the name: the first encoder named."""
    spec = resolve_spec(name)
    if spec.main is None:
        return None
    return "notes" if name.startswith("Bert") else "time_series"
