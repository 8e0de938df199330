"""Versioned binary checkpoints of named float32 parameters.

Layout, all integers little-endian::

    b"CFCK" | u32 version | u64 entries | entries | config trailer
    per entry: u32 name length | UTF-8 name | u32 rank | rank x u64 extents
               | float32 values in C order
    config trailer: u32 config length | config JSON

Readers that only want the tensors may stop after the last entry.
"""

from __future__ import annotations

import json
import logging
import pathlib
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from Costformer.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"CFCK"
FORMAT_VERSION = 1
_VALUE_DTYPE = np.dtype("<f4")


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Parameter tensors by name plus the configuration they belong to."""

    params: dict[str, np.ndarray]
    config: dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def equals(self, other: Checkpoint) -> bool:
        """Whether both hold the same names, shapes and exact values."""
        if self.params.keys() != other.params.keys():
            return False
        return all(
            self.params[name].shape == other.params[name].shape
            and np.array_equal(self.params[name], other.params[name])
            for name in self.params
        )


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    """Serialize ``checkpoint`` to bytes."""
    config = json.dumps(checkpoint.config, sort_keys=True).encode("utf-8")
    chunks = [
        MAGIC,
        struct.pack("<I", checkpoint.version),
        struct.pack("<Q", len(checkpoint.params)),
    ]
    for name, values in checkpoint.params.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(values, dtype=_VALUE_DTYPE)
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(array.tobytes())
    chunks.append(struct.pack("<I", len(config)))
    chunks.append(config)
    return b"".join(chunks)


class _Reader:
    """Cursor over checkpoint bytes that fails on truncation."""

    def __init__(self, payload: bytes) -> None:
        """Start at the first byte."""
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        """Consume ``size`` bytes."""
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointError(
                f"checkpoint truncated at byte {self.offset} (need {size} more)"
            )
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> tuple[int, ...]:
        """Consume and decode one ``struct`` record."""
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(payload: bytes) -> Checkpoint:
    """Parse bytes written by :func:`encode_checkpoint`."""
    reader = _Reader(payload)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (count,) = reader.unpack("<Q")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<I")
        try:
            name = reader.take(name_length).decode("utf-8")
        except UnicodeDecodeError as error:
            raise CheckpointError("parameter name is not UTF-8") from error
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}Q")
        size = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(size * _VALUE_DTYPE.itemsize)
        values = np.frombuffer(raw, dtype=_VALUE_DTYPE)
        params[name] = values.reshape(shape).copy()
    (config_length,) = reader.unpack("<I")
    try:
        config = json.loads(reader.take(config_length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise CheckpointError("checkpoint config is not valid JSON") from error
    if reader.offset != len(payload):
        raise CheckpointError(
            f"{len(payload) - reader.offset} trailing bytes after the config"
        )
    return Checkpoint(params=params, config=config, version=version)


def save_checkpoint(path: str | pathlib.Path, checkpoint: Checkpoint) -> None:
    """Write ``checkpoint`` to ``path``."""
    pathlib.Path(path).write_bytes(encode_checkpoint(checkpoint))
    logger.info("saved %d tensors to %s", len(checkpoint.params), path)


def load_checkpoint(path: str | pathlib.Path) -> Checkpoint:
    """Read a checkpoint file."""
    try:
        payload = pathlib.Path(path).read_bytes()
    except FileNotFoundError as error:
        raise CheckpointError(f"checkpoint {path} does not exist") from error
    checkpoint = decode_checkpoint(payload)
    logger.debug("loaded %d tensors from %s", len(checkpoint.params), path)
    return checkpoint


def checkpoint_from_state(
    state: Mapping[str, np.ndarray], config: Mapping[str, Any]
) -> Checkpoint:
    """Snapshot a state dict as float32 copies."""
    return Checkpoint(
        params={
            name: np.array(values, dtype=np.float32)
            for name, values in state.items()
        },
        config=dict(config),
    )
