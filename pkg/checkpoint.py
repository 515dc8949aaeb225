#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Checkpoint Module

Versioned binary container for training state.

Layout: 8-byte magic, uint32 format version, uint64 payload length, 32-byte
sha256 of the payload, then the payload itself (a torch.save'd dict made only
of tensors and primitives, so it loads with weights_only=True).
"""

import hashlib
import io
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import torch

from errors import ConfigurationError, IntegrityError, MissingArtifactError, UnsupportedVersionError

# Set up logging
logger = logging.getLogger(__name__)

MAGIC = b'MEGCKPT\x00'
FORMAT_VERSION = 1
HEADER = struct.Struct('<8sIQ32s')
CHECKPOINT_PATTERN = 'checkpoint_*.meg'


@dataclass
class Checkpoint:
    """Everything needed to resume a run bit-for-bit."""
    config: dict
    iteration: int
    energy: dict
    generator: dict
    statistics: dict
    optimizers: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    stream_state: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def to_payload(self):
        return {
            'format_version': self.format_version,
            'config': self.config,
            'iteration': int(self.iteration),
            'energy': dict(self.energy),
            'generator': dict(self.generator),
            'statistics': dict(self.statistics),
            'optimizers': self.optimizers,
            'rng_state': self.rng_state,
            'stream_state': self.stream_state,
        }


def checkpoint_path(directory, iteration):
    return Path(directory) / f"checkpoint_{int(iteration):08d}.meg"


def latest_checkpoint(directory):
    """Most recent checkpoint in a directory, or None."""
    found = sorted(Path(directory).glob(CHECKPOINT_PATTERN))
    return found[-1] if found else None


def save_checkpoint(ckpt, path):
    """
    Write a checkpoint atomically.

    Args:
        ckpt (Checkpoint): State to persist
        path (str or Path): Destination file

    Returns:
        Path: The written path
    """
    buffer = io.BytesIO()
    torch.save(ckpt.to_payload(), buffer)
    payload = buffer.getvalue()
    header = HEADER.pack(MAGIC, ckpt.format_version, len(payload), hashlib.sha256(payload).digest())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    with open(tmp, 'wb') as f:
        f.write(header)
        f.write(payload)
    os.replace(tmp, path)
    logger.info(f"Saved checkpoint at iteration {ckpt.iteration} to {path}")
    return path


def load_checkpoint(path):
    """
    Read and verify a checkpoint.

    Raises:
        MissingArtifactError: If the file does not exist
        IntegrityError: If the file is truncated or fails its checksum
        UnsupportedVersionError: If the format version is not readable
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError('Checkpoint', path)
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise IntegrityError(f"Checkpoint {path} is truncated ({len(raw)} bytes, header needs {HEADER.size})")

    magic, version, length, digest = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise IntegrityError(f"{path} is not a checkpoint file")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"Checkpoint {path} has format version {version}, "
                                      f"this build reads version {FORMAT_VERSION}")
    payload = raw[HEADER.size:]
    if len(payload) != length:
        raise IntegrityError(f"Checkpoint {path} is truncated: payload has {len(payload)} of {length} bytes")
    if hashlib.sha256(payload).digest() != digest:
        raise IntegrityError(f"Checkpoint {path} failed its content checksum")

    data = torch.load(io.BytesIO(payload), weights_only=True)
    return Checkpoint(
        config=data['config'],
        iteration=data['iteration'],
        energy=data['energy'],
        generator=data['generator'],
        statistics=data['statistics'],
        optimizers=data['optimizers'],
        rng_state=data['rng_state'],
        stream_state=data['stream_state'],
        format_version=data['format_version'],
    )


def checkpoint_roundtrip(ckpt, path):
    """load(save(ckpt)); used to assert bitwise persistence."""
    return load_checkpoint(save_checkpoint(ckpt, path))


def check_compatible(ckpt, config):
    """
    Refuse a checkpoint whose model dimensions differ from the run config.

    Args:
        ckpt (Checkpoint): Loaded checkpoint
        config (dict): Full run configuration

    Raises:
        ConfigurationError: With a per-field dimension diagnostic
    """
    saved = ckpt.config.get('model', {})
    wanted = config.get('model', {})
    problems = []
    for key in ('latent_dim', 'data_shape', 'energy', 'generator', 'statistics'):
        a, b = saved.get(key), wanted.get(key)
        if key == 'data_shape':
            a, b = list(a or []), list(b or [])
        if a != b:
            problems.append(f"model.{key}: checkpoint={a} config={b}")
    if problems:
        raise ConfigurationError("Checkpoint is incompatible with the configuration (dimension mismatch): "
                                 + '; '.join(problems))
