#!/usr/bin/env python3
"""
Binary parameter checkpoints.

Layout (all integers little-endian):

    magic            8 bytes  b"GATEFUSE"
    version          u32
    config digest    32 bytes sha256 of the canonical config JSON
    config length    u32, followed by the UTF-8 config JSON
    tensor count     u32
    per tensor:      u32 name length, UTF-8 name, u32 rank, rank x u64 extents,
                     raw '<f8' values in row-major order
"""

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from core.errors import CheckpointError
from engine.nn import Module

logger = logging.getLogger(__name__)

MAGIC = b"GATEFUSE"
VERSION = 1


def canonical_json(config: Dict[str, Any]) -> bytes:
    """Sorted, compact JSON encoding used for digests."""
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_digest(config: Dict[str, Any]) -> str:
    """Hex sha256 of the canonical config JSON."""
    return hashlib.sha256(canonical_json(config)).hexdigest()


def encode_checkpoint(config: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> bytes:
    """
    Serialize a config and named parameter arrays.

    Args:
        config: JSON-serializable model configuration.
        arrays: Parameter name -> array, written in insertion order.

    Returns:
        The checkpoint bytes.
    """
    config_bytes = canonical_json(config)
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        hashlib.sha256(config_bytes).digest(),
        struct.pack("<I", len(config_bytes)),
        config_bytes,
        struct.pack("<I", len(arrays)),
    ]
    for name, array in arrays.items():
        values = np.ascontiguousarray(array, dtype="<f8")
        encoded_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded_name)))
        parts.append(encoded_name)
        parts.append(struct.pack("<I", values.ndim))
        parts.append(struct.pack(f"<{values.ndim}Q", *values.shape))
        parts.append(values.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.payload):
            raise CheckpointError(f"Checkpoint truncated at byte {self.offset} (needed {count} more)")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(payload: bytes) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Parse checkpoint bytes into (config, arrays).

    Raises:
        CheckpointError: On bad magic, unsupported version, digest mismatch,
            truncation or trailing bytes.
    """
    reader = _Reader(payload)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("Not a gatefuse checkpoint (bad magic)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}; expected {VERSION}")
    digest = reader.take(32)
    (config_length,) = reader.unpack("<I")
    config_bytes = reader.take(config_length)
    if hashlib.sha256(config_bytes).digest() != digest:
        raise CheckpointError("Checkpoint config digest mismatch")
    try:
        config = json.loads(config_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Checkpoint config is not valid JSON: {e}")

    (count,) = reader.unpack("<I")
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<I")
        name = reader.take(name_length).decode("utf-8")
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64)
        arrays[name] = values.reshape(shape)
    if reader.offset != len(payload):
        raise CheckpointError(f"Checkpoint has {len(payload) - reader.offset} trailing bytes")
    return config, arrays


def save_checkpoint(path: Union[str, Path], model: Module, config: Dict[str, Any]) -> Path:
    """
    Write ``model``'s parameters and ``config`` to ``path``.

    Returns:
        The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(config, model.state_arrays()))
    logger.debug(f"Saved checkpoint to {path}")
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read a checkpoint file.

    Raises:
        CheckpointError: If the file is missing or malformed.
    """
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")
    return decode_checkpoint(payload)


def load_into(model: Module, arrays: Dict[str, np.ndarray], expected_config: Dict[str, Any], stored_config: Dict[str, Any]) -> None:
    """
    Copy checkpoint arrays into ``model`` after checking the configs agree.

    Raises:
        CheckpointError: If the digests differ or parameters do not line up.
    """
    if config_digest(expected_config) != config_digest(stored_config):
        raise CheckpointError("Checkpoint was written for a different model configuration")
    model.load_state_arrays(arrays)
