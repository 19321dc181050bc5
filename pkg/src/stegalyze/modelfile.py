"""Binary model file format.

Layout, all integers little-endian::

    magic      8 bytes   b"STEGLCNN"
    version    uint16    FORMAT_VERSION
    meta_len   uint32
    meta       meta_len bytes of UTF-8 JSON: {"config": {...}, "vocab": [...] | null}
    n_tensors  uint32
    n_tensors times:
        name_len  uint16
        name      name_len bytes UTF-8
        ndim      uint8
        dims      ndim x uint32
        values    prod(dims) x float32 (little-endian, C order)

The JSON is written with sorted keys and no whitespace so identical models
produce identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    ModelFileError,
    ShapeMismatchError,
    TruncatedStreamError,
    VersionMismatchError,
)
from .model import ModelConfig, ModelParams, build_params, param_shapes

MAGIC = b"STEGLCNN"
FORMAT_VERSION = 1
_F32 = np.dtype("<f4")


def serialize(params: ModelParams, config: ModelConfig, vocab=None) -> bytes:
    meta = json.dumps(
        {"config": config.to_dict(), "vocab": list(vocab) if vocab is not None else None},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    named = params.named_tensors()
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(named))]
    for name, t in named.items():
        raw = name.encode("utf-8")
        shape = t.shape
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
        parts.append(np.ascontiguousarray(t.data, dtype=_F32).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n, what):
        if n < 0 or self.pos + n > len(self.buf):
            raise TruncatedStreamError(f"stream ends inside {what} (offset {self.pos}, need {n} bytes)")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def deserialize(data: bytes):
    """Parse a model stream; returns ``(params, config, vocab)``.

    Raises a :class:`~stegalyze.errors.ModelFileError` subclass for every kind
    of malformed input.
    """
    r = _Reader(data)
    if len(data) < len(MAGIC):
        raise TruncatedStreamError(f"stream of {len(data)} bytes is shorter than the header")
    if bytes(r.take(len(MAGIC), "magic")) != MAGIC:
        raise BadMagicError("not a stegalyze model file (bad magic)")
    (version,) = r.unpack("<H", "version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"model format version {version}, this build reads {FORMAT_VERSION}")
    (meta_len,) = r.unpack("<I", "metadata length")
    try:
        meta = json.loads(bytes(r.take(meta_len, "metadata")).decode("utf-8"))
        config = ModelConfig.from_dict(meta["config"])
        vocab = meta.get("vocab")
        if vocab is not None and not (isinstance(vocab, list) and all(isinstance(w, str) for w in vocab)):
            raise ValueError("vocab must be a list of strings")
    except TruncatedStreamError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError, ConfigError) as exc:
        raise ModelFileError(f"unreadable model metadata: {exc}") from exc

    expected = param_shapes(config)
    if vocab is not None and len(vocab) != config.vocab_size:
        raise ShapeMismatchError(f"vocabulary has {len(vocab)} words but config says {config.vocab_size}")
    (n_tensors,) = r.unpack("<I", "tensor count")
    if n_tensors != len(expected):
        raise ShapeMismatchError(f"file holds {n_tensors} tensors, config implies {len(expected)}")

    arrays = {}
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H", "tensor name length")
        try:
            name = bytes(r.take(name_len, "tensor name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelFileError(f"tensor name is not UTF-8: {exc}") from exc
        (ndim,) = r.unpack("<B", f"rank of {name}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name}")
        if name not in expected:
            raise ShapeMismatchError(f"unexpected tensor {name!r} for this config")
        if name in arrays:
            raise ShapeMismatchError(f"tensor {name!r} appears twice")
        if tuple(shape) != expected[name]:
            raise ShapeMismatchError(f"tensor {name} has shape {tuple(shape)}, config implies {expected[name]}")
        n = int(np.prod(shape, dtype=np.int64))
        raw = r.take(4 * n, f"values of {name}")
        arr = np.frombuffer(raw, dtype=_F32).astype(np.float32).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise ModelFileError(f"tensor {name} contains NaN or Inf")
        arrays[name] = arr
    if r.pos != len(r.buf):
        raise ModelFileError(f"{len(r.buf) - r.pos} trailing bytes after the last tensor")
    return build_params(config, arrays), config, vocab


def expected_size(config: ModelConfig, vocab=None) -> int:
    """Byte length of a serialized model, from shape arithmetic alone."""
    meta = json.dumps(
        {"config": config.to_dict(), "vocab": list(vocab) if vocab is not None else None},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    size = len(MAGIC) + 2 + 4 + len(meta) + 4
    for name, shape in param_shapes(config).items():
        size += 2 + len(name.encode("utf-8")) + 1 + 4 * len(shape) + 4 * int(np.prod(shape, dtype=np.int64))
    return size


def save(path, params, config, vocab=None):
    Path(path).write_bytes(serialize(params, config, vocab))


def load(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc.strerror}") from exc
    return deserialize(data)
