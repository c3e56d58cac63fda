"""Binary checkpoint format (all integers little-endian).

    magic        8 bytes  b"OCRKCKPT"
    version      u16      1
    kind         u8       0 = ctc, 1 = char
    alphabet     8 bytes  sha256 prefix of the alphabet file text
    alpha_len    u32      then the alphabet file text (UTF-8)
    meta_len     u32      then a JSON object (UTF-8): training metadata
    n_params     u16
    per parameter:
        name_len u16, name (UTF-8), ndim u8, ndim x u32 dims, float32 values
    crc32        u32      over every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from ..preprocess import PreprocessConfig
from ..types import Alphabet
from .model import CharRecognizer, ConvRecognizer

MAGIC = b"OCRKCKPT"
VERSION = 1
KINDS = {"ctc": 0, "char": 1}


def dumps(model, metadata: dict | None = None) -> bytes:
    meta = dict(metadata or {})
    meta["preprocess"] = asdict(model.preprocess)
    if model.kind == "char":
        meta["k"] = model.k
    alpha_text = model.alphabet.to_text().encode("utf-8")
    meta_text = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HB", VERSION, KINDS[model.kind]), model.alphabet.digest(),
             struct.pack("<I", len(alpha_text)), alpha_text,
             struct.pack("<I", len(meta_text)), meta_text]
    params = model.params()
    parts.append(struct.pack("<H", len(params)))
    for name, p, _ in params:
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes):
    """Rebuild a model from checkpoint bytes; returns ``(model, metadata)``."""
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not an ocrk checkpoint")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    r = _Reader(data[:-4])
    r.take(len(MAGIC))
    version, kind_code = r.unpack("<HB")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = r.take(8)
    (n,) = r.unpack("<I")
    alphabet = Alphabet.from_text(r.take(n).decode("utf-8"))
    if alphabet.digest() != digest:
        raise CheckpointError("alphabet hash does not match the embedded alphabet")
    (n,) = r.unpack("<I")
    meta = json.loads(r.take(n).decode("utf-8"))
    pre = meta.get("preprocess", {})
    if "char_model_size" in pre:
        pre["char_model_size"] = tuple(pre["char_model_size"])
    preprocess = PreprocessConfig(**pre)
    arrays = {}
    (count,) = r.unpack("<H")
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
    if kind_code == KINDS["ctc"]:
        model = ConvRecognizer(alphabet, dtype=np.float32, preprocess=preprocess)
    elif kind_code == KINDS["char"]:
        model = CharRecognizer(alphabet, dtype=np.float32, preprocess=preprocess, k=int(meta.get("k", 23)))
    else:
        raise CheckpointError(f"unknown model kind {kind_code}")
    try:
        model.set_parameters(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc)) from exc
    return model, meta


def save(model, path, metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(model, metadata))


def load(path):
    return loads(Path(path).read_bytes())


def load_model(path):
    return load(path)[0]
