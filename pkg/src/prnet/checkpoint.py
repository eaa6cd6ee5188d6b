"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PRNC" | u32 version | u32 header_len | header (UTF-8 JSON config)
    repeated per parameter, in registration order:
        u16 name_len | name (UTF-8) | u8 dtype (0 = f32) | u8 rank | rank x u32 dims | f32 payload
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig, build

MAGIC = b"PRNC"
VERSION = 1
DTYPE_F32 = 0


class CheckpointError(ValueError):
    def __init__(self, kind: str, message: str):
        super().__init__(f"checkpoint {kind} error: {message}")
        self.kind = kind


def dumps(model: Model) -> bytes:
    header = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for name, p in model.named_parameters():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", DTYPE_F32, p.data.ndim))
        parts.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: Model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(model))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated", f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes, dtype=None) -> Model:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("magic", "not a PRNC checkpoint")
    version, hlen = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError("version", f"unsupported version {version}")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(hlen).decode()))
    except CheckpointError:
        raise
    except (ValueError, TypeError) as exc:
        raise CheckpointError("header", str(exc)) from exc

    model = build(config, seed=0, dtype=np.float32)
    values = {}
    expected = list(model.params)
    for want in expected:
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        if name != want:
            raise CheckpointError("shape", f"expected parameter {want!r}, found {name!r}")
        code, rank = r.unpack("<BB")
        if code != DTYPE_F32:
            raise CheckpointError("dtype", f"{name}: unsupported dtype code {code}")
        dims = r.unpack(f"<{rank}I")
        if tuple(dims) != model.params[name].shape:
            raise CheckpointError("shape", f"{name}: file has {dims}, architecture needs {model.params[name].shape}")
        count = int(np.prod(dims))
        values[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
    if r.pos != len(buf):
        raise CheckpointError("trailing", f"{len(buf) - r.pos} unexpected trailing bytes")
    # only mutate once everything parsed
    for name, arr in values.items():
        model.params[name].data = arr.astype(np.float32)
    if dtype is not None:
        model.to_dtype(dtype)
    return model


def load_checkpoint(path, dtype=None) -> Model:
    return loads(Path(path).read_bytes(), dtype=dtype)
