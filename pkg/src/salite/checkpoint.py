"""Binary checkpoint format (magic "SALT", version 1).

Layout, all integers little-endian:

    bytes 0-3   magic "SALT"
    u32         format version (1)
    u32         training step counter
    u64         RNG seed (the trainer derives all streams from seed + step,
                so seed + step fully pins the stream position)
    u32         metadata length, then that many UTF-8 bytes of sorted
                `key = value` lines (the effective run configuration)
    u32         tensor count, then per tensor:
                  u16 name length + name bytes
                  u8 rank, u32 dims[rank]
                  float32 payload, little-endian, row-major

Round trips are byte-identical. Loading validates magic, version, and, when
binding to a model, every name and shape.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (BadMagicError, TensorMismatchError, TruncatedCheckpointError,
                     VersionMismatchError)

MAGIC = b"SALT"
VERSION = 1
OPT_PREFIX = "opt."


@dataclass
class Checkpoint:
    step: int = 0
    seed: int = 0
    meta: dict[str, str] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def model_tensors(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith(OPT_PREFIX)}

    def optimizer_tensors(self) -> dict[str, np.ndarray]:
        return {k[len(OPT_PREFIX):]: v for k, v in self.tensors.items()
                if k.startswith(OPT_PREFIX)}


def _meta_bytes(meta: dict[str, str]) -> bytes:
    lines = [f"{k} = {meta[k]}" for k in sorted(meta)]
    return "\n".join(lines).encode("utf-8")


def _parse_meta(blob: bytes) -> dict[str, str]:
    meta = {}
    for line in blob.decode("utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        meta[key] = value
    return meta


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", ckpt.step),
             struct.pack("<Q", ckpt.seed & (2**64 - 1))]
    meta = _meta_bytes(ckpt.meta)
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes, path: str):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedCheckpointError(
                f"{self.path}: truncated at byte {self.pos} (need {n} more bytes)")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"{path}: bad magic (not a checkpoint)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {VERSION}")
    (step,) = r.unpack("<I")
    (seed,) = r.unpack("<Q")
    (meta_len,) = r.unpack("<I")
    meta = _parse_meta(r.take(meta_len))
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        payload = r.take(4 * int(np.prod(dims)) if rank else 4)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return Checkpoint(step=step, seed=seed, meta=meta, tensors=tensors)


def bind_to_model(ckpt: Checkpoint, model) -> None:
    """Copy checkpoint tensors into a built model, strictly by name and shape."""
    named = model.named_tensors()
    seen = set()
    for name, arr in ckpt.model_tensors().items():
        if name not in named:
            raise TensorMismatchError(f"checkpoint tensor {name!r} unknown to the current model spec")
        t = named[name]
        if tuple(arr.shape) != tuple(t.shape):
            raise TensorMismatchError(
                f"checkpoint tensor {name!r} has dims {tuple(arr.shape)}, model expects {tuple(t.shape)}")
        t.data[...] = arr.astype(t.dtype)
        seen.add(name)
    missing = set(named) - seen
    if missing:
        raise TensorMismatchError(f"checkpoint is missing model tensors: {sorted(missing)[:5]}")
