"""Single-file tensor container.

Layout::

    b"FSVDCKPT"            8-byte magic
    u32 little-endian      format version
    u64 little-endian      header length in bytes
    header                 UTF-8 JSON: metadata + tensor directory
    payload                raw little-endian float32 tensors, back to back
    32 bytes               SHA-256 of everything above

Each directory entry records ``name``, ``dtype``, ``shape`` and ``offset``
(bytes from the start of the payload).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import DenoiserParams, ModelConfig, hash_tensors

MAGIC = b"FSVDCKPT"
VERSION = 1


class CheckpointError(IOError):
    pass


class ChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str  # "base" or "adapter"
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.config.hash()

    def params(self) -> DenoiserParams:
        if self.kind != "base":
            raise ValueError("only base checkpoints hold model parameters")
        return DenoiserParams(self.config, dict(self.tensors))

    def tensor_hash(self) -> str:
        return hash_tensors(self.tensors)


def _pack(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    directory, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        directory.append({"name": name, "dtype": "float32", "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = dict(header, tensors=directory)
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def _unpack(blob: bytes):
    if len(blob) < len(MAGIC) + 12 + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint container (bad magic or truncated)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch: file is corrupt or truncated")
    version, hlen = struct.unpack("<IQ", body[len(MAGIC): len(MAGIC) + 12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    start = len(MAGIC) + 12
    header = json.loads(body[start: start + hlen].decode())
    payload = memoryview(body)[start + hlen:]
    tensors = {}
    for entry in header.pop("tensors"):
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    return header, tensors


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    header = {
        "kind": ckpt.kind,
        "config": ckpt.config.to_dict(),
        "config_hash": ckpt.config_hash,
        "schedule": ckpt.schedule,
        "metadata": ckpt.metadata,
        "optimizer_keys": sorted(ckpt.optimizer),
    }
    tensors = dict(ckpt.tensors)
    for k, v in ckpt.optimizer.items():
        tensors["__opt__/" + k] = v
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_pack(header, tensors))
    return path


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    header, tensors = _unpack(blob)
    config = ModelConfig(**header["config"])
    if config.hash() != header["config_hash"]:
        raise CheckpointError("config hash in header does not match its config")
    opt = {k[len("__opt__/"):]: tensors.pop(k) for k in list(tensors) if k.startswith("__opt__/")}
    return Checkpoint(header["kind"], config, tensors, opt, header["schedule"], header["metadata"])
