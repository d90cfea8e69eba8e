"""Checkpoint persistence: model config, parameters, training metadata.

File layout: a magic+version line, a decimal header-length line, a JSON
header (model config, metadata, tensor name order), the tensor records
in header order, and a trailing 8-byte digest (leading bytes of SHA-256
over everything before it). Round trips are byte-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig
from .params import ModelParams
from .tensor import tensor_from_bytes, tensor_to_bytes

MAGIC = b"scenekit-checkpoint"
FORMAT_VERSION = 1
DIGEST_BYTES = 8


class CheckpointError(RuntimeError):
    """Malformed, truncated, tampered, or version-mismatched checkpoint."""


@dataclass
class Checkpoint:
    model: ModelConfig
    params: ModelParams
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "model": ckpt.model.to_dict(),
        "metadata": ckpt.metadata,
        "tensors": ckpt.params.names(),
    }
    header_json = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + b" %d\n" % ckpt.version
    body += b"%d\n" % len(header_json)
    body += header_json
    for _, t in ckpt.params.items():
        body += tensor_to_bytes(t.data)
    return body + hashlib.sha256(body).digest()[:DIGEST_BYTES]


def save_checkpoint(ckpt: Checkpoint, path: Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path: Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < DIGEST_BYTES:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    body, digest = raw[:-DIGEST_BYTES], raw[-DIGEST_BYTES:]
    if hashlib.sha256(body).digest()[:DIGEST_BYTES] != digest:
        raise CheckpointError(f"{path}: digest mismatch, file corrupt or tampered")
    newline = body.find(b"\n")
    if newline < 0 or not body[:newline].startswith(MAGIC + b" "):
        raise CheckpointError(f"{path}: missing checkpoint magic")
    try:
        version = int(body[len(MAGIC) + 1:newline])
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable format version") from exc
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    pos = newline + 1
    newline = body.find(b"\n", pos)
    if newline < 0:
        raise CheckpointError(f"{path}: truncated before header")
    try:
        header_len = int(body[pos:newline])
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable header length") from exc
    pos = newline + 1
    if len(body) < pos + header_len:
        raise CheckpointError(f"{path}: truncated inside header")
    try:
        header = json.loads(body[pos:pos + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: header is not valid JSON") from exc
    pos += header_len

    params = ModelParams()
    for name in header["tensors"]:
        try:
            data, pos = tensor_from_bytes(body, pos)
        except ValueError as exc:
            raise CheckpointError(f"{path}: tensor {name!r}: {exc}") from exc
        params.add(name, data)
    if pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - pos} unexpected trailing bytes")
    return Checkpoint(model=ModelConfig.from_dict(header["model"]),
                      params=params,
                      metadata=header["metadata"],
                      version=version)
