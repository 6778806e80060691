"""Versioned binary checkpoints.

Layout (little-endian)::

    b"NFCK" | u16 version | u32 header length | header JSON (utf-8)
    | f32[n] parameters | [f32[n] Adam first moments | f32[n] second moments]
    | 8-byte BLAKE2b digest of everything before it

The header holds the architecture, the training config, the PCA model, the
step counter and the loss history. ``n`` and the presence of optimizer state
are recorded in the header.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..features import PcaModel
from .network import DenoiserConfig

MAGIC = b"NFCK"
VERSION = 1
_DIGEST = 8


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    config: DenoiserConfig
    params: np.ndarray  # float32 (n,)
    pca: PcaModel | None = None
    step: int = 0
    losses: list[float] = field(default_factory=list)
    train_config: dict = field(default_factory=dict)
    adam: tuple[np.ndarray, np.ndarray] | None = None  # (exp_avg, exp_avg_sq)
    meta: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "n_params": int(self.params.size),
            "has_adam": self.adam is not None,
            "pca": None if self.pca is None else self.pca.to_dict(),
            "step": self.step,
            "losses": [float(x) for x in self.losses],
            "train_config": self.train_config,
            "meta": self.meta,
        }


def _f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def encode(ck: Checkpoint) -> bytes:
    if ck.adam is not None and any(a.size != ck.params.size for a in ck.adam):
        raise CheckpointError("optimizer state does not match parameter count")
    head = json.dumps(ck.header(), sort_keys=True).encode()
    body = MAGIC + struct.pack("<HI", VERSION, len(head)) + head + _f32(ck.params)
    if ck.adam is not None:
        body += _f32(ck.adam[0]) + _f32(ck.adam[1])
    return body + hashlib.blake2b(body, digest_size=_DIGEST).digest()


def decode(data: bytes) -> Checkpoint:
    if len(data) < 10 + _DIGEST or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.blake2b(body, digest_size=_DIGEST).digest() != digest:
        raise CheckpointError("checksum mismatch")
    version, hlen = struct.unpack_from("<HI", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 10 + hlen
    head = json.loads(body[10:off].decode())
    n = head["n_params"]
    arrays = 3 if head["has_adam"] else 1
    if len(body) - off != 4 * n * arrays:
        raise CheckpointError("payload size does not match header")
    flat = np.frombuffer(body, dtype="<f4", offset=off).astype(np.float32)
    return Checkpoint(
        config=DenoiserConfig.from_dict(head["config"]),
        params=flat[:n].copy(),
        pca=None if head["pca"] is None else PcaModel.from_dict(head["pca"]),
        step=head["step"],
        losses=head["losses"],
        train_config=head["train_config"],
        adam=(flat[n : 2 * n].copy(), flat[2 * n :].copy()) if head["has_adam"] else None,
        meta=head["meta"],
    )


def save(ck: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(ck))
    tmp.replace(path)
    return path


def load(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def file_hash(path) -> str:
    """Short content hash used in provenance blocks."""
    return hashlib.blake2b(Path(path).read_bytes(), digest_size=_DIGEST).hexdigest()
