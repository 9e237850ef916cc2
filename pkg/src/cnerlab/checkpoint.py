"""Binary model checkpoints.

Layout (all integers little-endian):

    magic   6 bytes  b"CNER1\\x00"
    version u16
    m_len   u64      byte length of the manifest block
    manifest         UTF-8 key=value lines: label set, vocabulary (tokens +
                     sha256), encoder config, training step, dev metric
    count   u32      number of named tensors
    per tensor:
        n_len u16, name UTF-8, dtype u8 (1 = f64), rank u8,
        dims rank*u64, payload row-major f64

The manifest embeds the full vocabulary so a checkpoint is loadable and
usable for prediction without any sidecar file.  Loading validates every
tensor shape against the embedded encoder config.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, fields

import numpy as np

from .corpus import LabelSet, Vocabulary
from .encoder import EncoderConfig, ModelParams, init_params, params_from_named
from .autodiff import Tensor
from .kv import format_kv, parse_kv

MAGIC = b"CNER1\x00"
VERSION = 1
_DTYPE_F64 = 1


class CheckpointFormatError(ValueError):
    pass


class ArchitectureMismatchError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    label_set: LabelSet
    vocab: Vocabulary
    step: int
    dev_metric: float

    @property
    def config(self) -> EncoderConfig:
        return self.params.config


def _manifest_entries(ckpt: Checkpoint) -> dict[str, str]:
    entries = {
        "labels": ",".join(ckpt.label_set.labels),
        "entity_types": ",".join(ckpt.label_set.entity_types),
        "step": str(ckpt.step),
        "dev_metric": repr(ckpt.dev_metric),
        "vocab.size": str(len(ckpt.vocab)),
        "vocab.sha256": ckpt.vocab.sha256(),
    }
    for f in fields(EncoderConfig):
        entries[f"encoder.{f.name}"] = repr(getattr(ckpt.config, f.name))
    for i, token in enumerate(ckpt.vocab.tokens):
        entries[f"vocab.token.{i}"] = token
    return entries


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    manifest = format_kv(_manifest_entries(ckpt)).encode("utf-8")
    named = ckpt.params.named()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        fh.write(struct.pack("<I", len(named)))
        for name, tensor in named:
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(tensor.data, dtype="<f8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", _DTYPE_F64, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh: io.BufferedReader, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointFormatError("truncated checkpoint file")
    return data


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise CheckpointFormatError("bad magic; not a checkpoint file")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported format version {version}")
        (m_len,) = struct.unpack("<Q", _read_exact(fh, 8))
        manifest = parse_kv(_read_exact(fh, m_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        named: dict[str, Tensor] = {}
        for _ in range(count):
            (n_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, n_len).decode("utf-8")
            dtype, rank = struct.unpack("<BB", _read_exact(fh, 2))
            if dtype != _DTYPE_F64:
                raise CheckpointFormatError(f"tensor {name}: unknown dtype tag {dtype}")
            dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
            payload = _read_exact(fh, 8 * int(np.prod(dims)))
            named[name] = Tensor(np.frombuffer(payload, dtype="<f8").reshape(dims).copy())

    kwargs = {}
    for f in fields(EncoderConfig):
        raw = manifest[f"encoder.{f.name}"]
        kwargs[f.name] = float(raw) if f.type == "float" else int(raw)
    config = EncoderConfig(**kwargs)

    expected = {name: t.shape for name, t in init_params(config).named()}
    got = {name: t.shape for name, t in named.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        stray = sorted(set(got) - set(expected))
        wrong = sorted(n for n in expected.keys() & got.keys() if expected[n] != got[n])
        raise CheckpointFormatError(
            f"tensor layout does not match config (missing={missing}, "
            f"unexpected={stray}, bad shapes={wrong})"
        )

    label_set = LabelSet(
        labels=tuple(manifest["labels"].split(",")),
        entity_types=tuple(manifest["entity_types"].split(",")),
    )
    size = int(manifest["vocab.size"])
    vocab = Vocabulary(tuple(manifest[f"vocab.token.{i}"] for i in range(size)))
    if vocab.sha256() != manifest["vocab.sha256"]:
        raise CheckpointFormatError("vocabulary hash mismatch")
    return Checkpoint(
        params=params_from_named(config, named),
        label_set=label_set,
        vocab=vocab,
        step=int(manifest["step"]),
        dev_metric=float(manifest["dev_metric"]),
    )
