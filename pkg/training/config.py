#!/usr/bin/env python3
"""
Model and training configuration.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.errors import ConfigError
from core.utils import load_json_file
from dataset.io import DatasetHeader
from models.registry import FUSIONS, resolve_spec

logger = logging.getLogger(__name__)

TASK_LABELS = {"arf_binary": "binary", "diagnoses_multilabel": "multilabel"}
DATASET_FIELDS = ("d1", "l", "d2", "vocab", "n_labels")


class ModelConfig(BaseModel):
    """
    Everything needed to build, train and evaluate one registry model.
    """

    model_config = ConfigDict(protected_namespaces=(), extra="forbid")

    model_name: str = Field(..., description="Registry key, e.g. LstmBert or BertEncoder[AT]")
    task: Literal["arf_binary", "diagnoses_multilabel"] = Field("arf_binary", description="Prediction task")
    fusion: Optional[str] = Field(None, description="Fusion strategy; derived from the registry when omitted")
    main: Optional[Literal["notes", "time_series"]] = Field(None, description="Main modality; derived when omitted")

    ti_dim: int = Field(64, ge=1, description="Encoded time-invariant width D1'")
    ts_hidden: int = Field(32, ge=1, description="Time-series encoder state width L2'")
    ts_out: int = Field(32, ge=1, description="Encoded time-series width D2' after the projection")
    ts_layers: int = Field(1, ge=1, description="LSTM / transformer layers")
    ts_heads: int = Field(4, ge=1, description="Attention heads in time-series encoders")
    ts_cycles: int = Field(2, ge=0, description="Star-Transformer update cycles")
    ts_ffn: int = Field(64, ge=1, description="Feed-forward width of the time-series transformer")
    cnn_kernel: int = Field(3, ge=1, description="CNN kernel size")
    text_width: int = Field(64, ge=1, description="Text encoder width D3'")
    text_layers: int = Field(2, ge=1, description="Text encoder layers")
    text_heads: int = Field(4, ge=1, description="Text encoder attention heads")
    text_ffn: int = Field(128, ge=1, description="Text encoder feed-forward width")
    max_positions: int = Field(512, ge=1, description="Maximum note length")
    fusion_width: int = Field(32, ge=1, description="Output width of tensor and attention fusion")
    fusion_heads: int = Field(4, ge=1, description="Attention heads for attention fusion")

    dropout: float = Field(0.1, ge=0.0, lt=1.0, description="Dropout probability")
    learning_rate: float = Field(1e-4, ge=0.0, description="Adam learning rate")
    epochs: int = Field(50, ge=0, description="Training epochs")
    batch_size: int = Field(32, ge=1, description="Mini-batch size")
    seed: int = Field(0, ge=0, description="Seed for initialization, splits, shuffling and dropout")
    grad_clip: Optional[float] = Field(5.0, gt=0.0, description="Global gradient-norm clip; null disables")

    d1: Optional[int] = Field(None, ge=1, description="Time-invariant input width (from the dataset)")
    l: Optional[int] = Field(None, ge=1, description="Series length (from the dataset)")
    d2: Optional[int] = Field(None, ge=1, description="Time-series input width (from the dataset)")
    vocab: Optional[int] = Field(None, ge=2, description="Token vocabulary size (from the dataset)")
    n_labels: Optional[int] = Field(None, ge=1, description="Label-space size (from the dataset)")

    @model_validator(mode="after")
    def _consistent_with_registry(self) -> "ModelConfig":
        spec = resolve_spec(self.model_name)
        if self.fusion is not None and self.fusion not in FUSIONS:
            raise ValueError(f"Unknown fusion '{self.fusion}'; valid: {', '.join(FUSIONS)}")
        if self.fusion is not None and self.fusion != spec.fusion:
            raise ValueError(f"Model '{self.model_name}' uses fusion '{spec.fusion}', not '{self.fusion}'")
        if self.main is not None and self.main != spec.main:
            raise ValueError(f"Model '{self.model_name}' has main modality '{spec.main}', not '{self.main}'")
        if self.fusion is None:
            self.fusion = spec.fusion
        if self.main is None:
            self.main = spec.main
        return self

    @property
    def label_task(self) -> str:
        """Label task of the dataset: binary or multilabel."""
        return TASK_LABELS[self.task]

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def bind_dataset(self, header: DatasetHeader) -> "ModelConfig":
        """
        Fill input dimensions from a dataset header.

        Raises:
            ConfigError: If the task or an explicitly set dimension disagrees.
        """
        if header.task != self.label_task:
            raise ConfigError(f"Config task '{self.task}' does not match dataset task '{header.task}'")
        if header.d3_max > self.max_positions:
            raise ConfigError(f"Dataset notes reach {header.d3_max} tokens but max_positions is {self.max_positions}")
        updates = {}
        for name in DATASET_FIELDS:
            value = getattr(header, name)
            current = getattr(self, name)
            if current is not None and current != value:
                raise ConfigError(f"Config {name}={current} does not match dataset {name}={value}")
            updates[name] = value
        return self.model_copy(update=updates)


def parse_config(data: Dict[str, Any], **overrides: Any) -> ModelConfig:
    """
    Validate a config mapping, applying non-None overrides.

    Raises:
        ConfigError: If validation fails.
    """
    merged = dict(data)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ModelConfig(**merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid model config: {e}")


def load_config(file_path: Union[str, Path], seed: Optional[int] = None) -> ModelConfig:
    """
    Load a config JSON file; ``seed`` overrides the file's seed.

    Raises:
        ConfigError: If the file is missing or invalid.
    """
    try:
        data = load_json_file(file_path)
    except (FileNotFoundError, ValueError) as e:
        raise ConfigError(f"Cannot load config {file_path}: {e}")
    return parse_config(data, seed=seed)
