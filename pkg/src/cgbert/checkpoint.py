"""Binary checkpoint: header, vocabulary and float32 parameter payload with a checksum.

Layout (little-endian)::

    b"CGBTCKPT"           magic, 8 bytes
    u32 version
    u32 header length, header JSON (run config, model config, manifest)
    u32 vocab length, vocab bytes (one token per line)
    payload               float32 tensors in manifest order
    u64 checksum          blake2b-64 over every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .model import ModelConfig, param_shapes
from .text import Vocab

MAGIC = b"CGBTCKPT"
VERSION = 1


class CheckpointError(Exception):
    code = "checkpoint_error"


class TruncatedCheckpointError(CheckpointError):
    code = "truncated"


class BadMagicError(CheckpointError):
    code = "bad_magic"


class VersionMismatchError(CheckpointError):
    code = "version_mismatch"


class ChecksumMismatchError(CheckpointError):
    code = "checksum_mismatch"


class ShapeMismatchError(CheckpointError):
    code = "shape_mismatch"


@dataclass
class Checkpoint:
    run_config: dict
    model_config: ModelConfig
    vocab: Vocab
    params: dict  # name -> Tensor


def _checksum(raw: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


def to_bytes(params, vocab: Vocab, model_config: ModelConfig, run_config: dict) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, p in params.items():
        arr = np.ascontiguousarray(np.asarray(p.data, dtype="<f4"))
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"run_config": run_config, "model_config": model_config.to_dict(), "manifest": manifest},
        sort_keys=True,
    ).encode("utf-8")
    vocab_raw = vocab.to_bytes()
    body = b"".join(
        [
            MAGIC,
            struct.pack("<I", VERSION),
            struct.pack("<I", len(header)),
            header,
            struct.pack("<I", len(vocab_raw)),
            vocab_raw,
            *chunks,
        ]
    )
    return body + struct.pack("<Q", _checksum(body))


def save_checkpoint(path, params, vocab: Vocab, model_config: ModelConfig, run_config: dict) -> None:
    Path(path).write_bytes(to_bytes(params, vocab, model_config, run_config))


def from_bytes(raw: bytes, expected: ModelConfig | None = None) -> Checkpoint:
    if len(raw) < len(MAGIC) + 4:
        raise TruncatedCheckpointError("checkpoint is truncated (no header)")
    if raw[: len(MAGIC)] != MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, len(MAGIC))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    pos = len(MAGIC) + 4

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise TruncatedCheckpointError("checkpoint is truncated")
        out = raw[pos : pos + n]
        pos += n
        return out

    header_raw = take(struct.unpack("<I", take(4))[0])
    vocab_raw = take(struct.unpack("<I", take(4))[0])
    try:
        header = json.loads(header_raw.decode("utf-8"))
        vocab = Vocab.from_bytes(vocab_raw)
        manifest = header["manifest"]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError):
        raise ChecksumMismatchError("checkpoint failed its integrity check (corrupt header)") from None
    payload_len = sum(4 * int(np.prod(m["shape"], dtype=np.int64)) for m in manifest)
    payload = take(payload_len)
    if len(raw) - pos != 8:
        raise TruncatedCheckpointError("checkpoint is truncated (missing checksum)")
    (stored,) = struct.unpack_from("<Q", raw, pos)
    if stored != _checksum(raw[:pos]):
        raise ChecksumMismatchError("checkpoint failed its integrity check (checksum mismatch)")

    model_config = ModelConfig(**header["model_config"])
    shapes = param_shapes(model_config)
    names = [m["name"] for m in manifest]
    if sorted(names) != sorted(shapes) or len(set(names)) != len(names):
        raise ShapeMismatchError("checkpoint manifest does not cover the model's parameters exactly once")
    if expected is not None:
        want = param_shapes(expected)
        for m in manifest:
            if want.get(m["name"]) != tuple(m["shape"]):
                raise ShapeMismatchError(
                    f"shape mismatch for {m['name']}: checkpoint {tuple(m['shape'])}, model {want.get(m['name'])}"
                )
    params = {}
    for m in manifest:
        shape = tuple(m["shape"])
        if shapes[m["name"]] != shape:
            raise ShapeMismatchError(f"shape mismatch for {m['name']}: {shape} vs config {shapes[m['name']]}")
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=m["offset"]).reshape(shape).copy()
        params[m["name"]] = nx.parameter(arr, name=m["name"])
    return Checkpoint(header["run_config"], model_config, vocab, params)


def load_checkpoint(path, expected: ModelConfig | None = None) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), expected)
