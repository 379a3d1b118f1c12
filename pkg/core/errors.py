#!/usr/bin/env python3
"""
Exception hierarchy for the gatefuse toolkit.

Every error raised on purpose by the toolkit derives from FusionError, so the
command-line surface can turn it into a structured message and exit code 1.
"""

from typing import Any, Dict, Optional, Sequence, Tuple


class FusionError(Exception):
    """
    Base class for all toolkit errors.
    """


class ShapeError(FusionError, ValueError):
    """
    Raised when a primitive or layer receives tensors of incompatible shapes.
    """

    def __init__(self, kind: str, shapes: Sequence[Tuple[int, ...]], detail: Optional[str] = None):
        self.kind = kind
        self.shapes = [tuple(s) for s in shapes]
        rendered = " and ".join(str(s) for s in self.shapes)
        message = f"{kind}: incompatible shapes {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class GraphError(FusionError, RuntimeError):
    """
    Raised for misuse of the computation graph (non-scalar loss, consumed tape).
    """


class ConfigError(FusionError, ValueError):
    """
    Raised for invalid or inconsistent configuration.
    """


class DataError(FusionError, ValueError):
    """
    Raised for invalid data: out-of-vocabulary ids, malformed files, bad splits.
    """


class MetricError(FusionError, ValueError):
    """
    Raised when a metric is undefined for its input.
    """


class NonFiniteGradientError(FusionError, ArithmeticError):
    """
    Raised by the optimizer when a gradient contains NaN or Inf.
    """

    def __init__(self, parameter: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.parameter = parameter
        self.diagnostics = diagnostics or {}
        details = ", ".join(f"{k}={v}" for k, v in sorted(self.diagnostics.items()))
        message = f"Non-finite gradient for parameter '{parameter}'"
        if details:
            message = f"{message}: {details}"
        super().__init__(message)


class DivergenceError(FusionError, ArithmeticError):
    """
    Raised when the training loss becomes non-finite.
    """

    def __init__(self, epoch: int, last_checkpoint: Optional[str]):
        self.epoch = epoch
        self.last_checkpoint = last_checkpoint
        super().__init__(
            f"Training diverged at epoch {epoch}; last good checkpoint: {last_checkpoint or 'none'}"
        )


class CheckpointError(FusionError, IOError):
    """
    Raised when a checkpoint file cannot be decoded or does not match its config.
    """
