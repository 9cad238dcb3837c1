"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"ADNMTCK\\0"
    u32       format version
    u64       length of the text block, then UTF-8 text:
                [config] / [meta] sections of "key = value" lines,
                [src_vocab] / [tgt_vocab] sections of one token per line
    u32       tensor count, then per tensor:
                u32 name length, name bytes, u32 rows, u32 cols,
                rows*cols float64 values in row-major order
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Vocabulary
from .model import ModelConfig, init_params
from .training import AdadeltaState

MAGIC = b"ADNMTCK\x00"
VERSION = 1
_GRAD, _DELTA = "adadelta.sq_grad/", "adadelta.sq_delta/"


class CheckpointError(ValueError):
    pass


class ModeMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    optimizer: AdadeltaState | None = None
    meta: dict[str, str] = field(default_factory=dict)
    src_vocab: Vocabulary | None = None
    tgt_vocab: Vocabulary | None = None


def _text_block(ckpt: Checkpoint) -> str:
    meta = dict(ckpt.meta)
    if ckpt.optimizer is not None:
        meta["adadelta.rho"] = repr(ckpt.optimizer.rho)
        meta["adadelta.eps"] = repr(ckpt.optimizer.eps)
    lines = ["[config]", *ckpt.config.to_text().splitlines(), "[meta]"]
    lines += [f"{k} = {v}" for k, v in sorted(meta.items())]
    for name, vocab in (("src_vocab", ckpt.src_vocab), ("tgt_vocab", ckpt.tgt_vocab)):
        if vocab is not None:
            lines += [f"[{name}]", *vocab.words]
    return "\n".join(lines) + "\n"


def _parse_text(text: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.split("\n")[:-1]:
        if line.startswith("[") and line.endswith("]") and line[1:-1] in ("config", "meta", "src_vocab", "tgt_vocab"):
            current = sections.setdefault(line[1:-1], [])
        elif current is None:
            raise CheckpointError("text block does not start with a section header")
        else:
            current.append(line)
    return sections


def _pairs(lines: list[str]) -> dict[str, str]:
    out = {}
    for line in lines:
        key, sep, value = line.partition(" = ")
        if not sep:
            raise CheckpointError(f"malformed config line {line!r}")
        out[key] = value
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write atomically: a failed save never leaves a partial file at ``path``."""
    tensors = dict(ckpt.params)
    if ckpt.optimizer is not None:
        tensors.update({_GRAD + k: v for k, v in ckpt.optimizer.sq_grad.items()})
        tensors.update({_DELTA + k: v for k, v in ckpt.optimizer.sq_delta.items()})
    text = _text_block(ckpt).encode("utf-8")
    chunks = [MAGIC, struct.pack("<IQ", VERSION, len(text)), text, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        value = np.asarray(value, dtype="<f8")
        if value.ndim != 2:
            raise CheckpointError(f"tensor {name!r} is not 2-D")
        raw = name.encode("utf-8")
        chunks += [struct.pack("<I", len(raw)), raw, struct.pack("<II", *value.shape),
                   np.ascontiguousarray(value).tobytes()]
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expect_mode: str | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    r = _Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, text_len = r.unpack("<IQ")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, this reader supports {VERSION}")
    try:
        sections = _parse_text(r.take(text_len).decode("utf-8"))
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: corrupt text block") from None
    try:
        config = ModelConfig.from_dict(_pairs(sections.get("config", [])))
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config block ({exc})") from None
    if expect_mode is not None and config.mode != expect_mode:
        raise ModeMismatchError(f"{path} holds a {config.mode} model, expected {expect_mode}")
    meta = _pairs(sections.get("meta", []))

    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        rows, cols = r.unpack("<II")
        tensors[name] = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} unexpected trailing bytes")

    params = {k: v for k, v in tensors.items() if not k.startswith(("adadelta.",))}
    expected = {k: v.shape for k, v in init_params(config).items()}
    if {k: v.shape for k, v in params.items()} != expected:
        raise CheckpointError(f"{path}: parameters do not match a {config.mode} model of this config")
    optimizer = None
    if "adadelta.rho" in meta:
        optimizer = AdadeltaState(float(meta.pop("adadelta.rho")), float(meta.pop("adadelta.eps")))
        optimizer.sq_grad = {k[len(_GRAD):]: v for k, v in tensors.items() if k.startswith(_GRAD)}
        optimizer.sq_delta = {k[len(_DELTA):]: v for k, v in tensors.items() if k.startswith(_DELTA)}
    vocabs = [Vocabulary(sections[s]) if s in sections else None for s in ("src_vocab", "tgt_vocab")]
    return Checkpoint(config, params, optimizer, meta, *vocabs)
