"""Versioned binary checkpoints.

Layout: 8-byte magic, u64 little-endian header length, canonical JSON
header (metadata, configs, normalization stats, rng state, tensor
manifest), raw little-endian float64 tensor blocks in manifest order, and a
trailing SHA-256 over everything before it. Canonical serialization makes
save -> load -> save byte-identical, which is what lets bit-exact training
resume be verified by comparing files.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import NormalizationStats
from .nn import ArchConfig

MAGIC = b"CHFORGE\x01"
FORMAT_VERSION = 1
TAG_PRETRAINED = "pretrained"
TAG_FINETUNED = "finetuned"
_HASH_LEN = 32


class CheckpointError(Exception):
    """Base class for checkpoint load/save failures."""


class CheckpointFormatError(CheckpointError):
    """Not a checkpoint file (bad magic or unparsable header)."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an unknown format version."""


class CheckpointTruncatedError(CheckpointError):
    """File shorter than the manifest promises."""


class CheckpointHashError(CheckpointError):
    """Stored content hash does not match the file bytes."""


class CheckpointProvenanceError(CheckpointError):
    """Checkpoint tag not valid for the requested operation."""


@dataclass(eq=False)
class Checkpoint:
    """Everything needed to resume training or generate channels."""

    tag: str
    arch: ArchConfig
    train_config: dict
    norm_stats: NormalizationStats
    g_params: dict[str, np.ndarray]
    d_params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int
    rng_state: dict
    epoch: int
    d_steps: int
    g_steps: int
    history: dict[str, np.ndarray]
    anchor_g: dict[str, np.ndarray] | None = None
    anchor_d: dict[str, np.ndarray] | None = None
    anchor_hash: str | None = None
    content_hash: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.tag not in (TAG_PRETRAINED, TAG_FINETUNED):
            raise ValueError(f"unknown checkpoint tag {self.tag!r}")
        if self.tag == TAG_FINETUNED and (self.anchor_g is None or self.anchor_d is None):
            raise ValueError("finetuned checkpoints must carry the anchor weights")


def _tensor_sections(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    sections: list[tuple[str, np.ndarray]] = []

    def add(ns: str, tensors: dict[str, np.ndarray]):
        for name, arr in tensors.items():
            sections.append((f"{ns}/{name}", np.asarray(arr, dtype=np.float64)))

    add("g", ckpt.g_params)
    add("d", ckpt.d_params)
    add("adam_m", ckpt.adam_m)
    add("adam_v", ckpt.adam_v)
    if ckpt.anchor_g is not None:
        add("anchor_g", ckpt.anchor_g)
    if ckpt.anchor_d is not None:
        add("anchor_d", ckpt.anchor_d)
    add("history", ckpt.history)
    return sections


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    sections = _tensor_sections(ckpt)
    header = {
        "format_version": FORMAT_VERSION,
        "tag": ckpt.tag,
        "anchor_hash": ckpt.anchor_hash,
        "arch": ckpt.arch.to_dict(),
        "train_config": ckpt.train_config,
        "norm_stats": ckpt.norm_stats.to_dict(),
        "rng_state": ckpt.rng_state,
        "epoch": ckpt.epoch,
        "d_steps": ckpt.d_steps,
        "g_steps": ckpt.g_steps,
        "adam_t": ckpt.adam_t,
        "tensors": [[name, list(arr.shape)] for name, arr in sections],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<Q", len(hbytes))
    out += hbytes
    for _, arr in sections:
        out += arr.astype("<f8", copy=False).tobytes()
    out += hashlib.sha256(out).digest()
    return bytes(out)


def content_hash(ckpt: Checkpoint) -> str:
    """Hex SHA-256 of the serialized checkpoint (the trailing file hash)."""
    return checkpoint_bytes(ckpt)[-_HASH_LEN:].hex()


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write the checkpoint; returns its content hash."""
    data = checkpoint_bytes(ckpt)
    Path(path).write_bytes(data)
    ckpt.content_hash = data[-_HASH_LEN:].hex()
    return ckpt.content_hash


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8:
        raise CheckpointTruncatedError(f"{path}: file too short for a checkpoint")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic; not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", data, len(MAGIC))
    body_start = len(MAGIC) + 8
    if len(data) < body_start + hlen:
        raise CheckpointTruncatedError(f"{path}: truncated header")
    try:
        header = json.loads(data[body_start : body_start + hlen])
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"{path}: unparsable header: {e}") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version!r} not understood (want {FORMAT_VERSION})"
        )
    manifest = header["tensors"]
    nbytes = sum(8 * int(np.prod(shape, dtype=np.int64)) if shape else 8
                 for _, shape in manifest)
    expected = body_start + hlen + nbytes + _HASH_LEN
    if len(data) < expected:
        raise CheckpointTruncatedError(
            f"{path}: expected {expected} bytes, found {len(data)}"
        )
    if len(data) != expected:
        raise CheckpointFormatError(f"{path}: {len(data) - expected} trailing bytes")
    digest = hashlib.sha256(data[:-_HASH_LEN]).digest()
    if digest != data[-_HASH_LEN:]:
        raise CheckpointHashError(f"{path}: content hash mismatch; file corrupted")

    offset = body_start + hlen
    groups: dict[str, dict[str, np.ndarray]] = {}
    for name, shape in manifest:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        ns, _, rest = name.partition("/")
        groups.setdefault(ns, {})[rest] = arr.reshape(shape).copy()

    ckpt = Checkpoint(
        tag=header["tag"],
        arch=ArchConfig.from_dict(header["arch"]),
        train_config=header["train_config"],
        norm_stats=NormalizationStats.from_dict(header["norm_stats"]),
        g_params=groups.get("g", {}),
        d_params=groups.get("d", {}),
        adam_m=groups.get("adam_m", {}),
        adam_v=groups.get("adam_v", {}),
        adam_t=header["adam_t"],
        rng_state=header["rng_state"],
        epoch=header["epoch"],
        d_steps=header["d_steps"],
        g_steps=header["g_steps"],
        history=groups.get("history", {}),
        anchor_g=groups.get("anchor_g"),
        anchor_d=groups.get("anchor_d"),
        anchor_hash=header["anchor_hash"],
    )
    ckpt.content_hash = data[-_HASH_LEN:].hex()
    return ckpt
