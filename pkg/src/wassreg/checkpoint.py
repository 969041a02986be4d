"""Versioned binary checkpoints.

Layout (all integers little-endian ``uint32``)::

    b"WTKR" | version | meta_len | meta (UTF-8 JSON, sorted keys)
    | n_tensors | per tensor: ndim, dims..., float64 little-endian data

Tensors are stored in the order ``W0, b0, W1, b1, ...``.
"""
from __future__ import annotations

import hashlib
import json
import struct
import warnings
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .model import ModelParams

MAGIC = b"WTKR"
VERSION = 1


def config_hash(config):
    """SHA-256 of the canonical JSON form of a config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def dumps(params, meta=None):
    meta = dict(meta or {})
    meta.setdefault("head", params.head)
    meta.setdefault("activation", params.activation)
    mbytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(mbytes)), mbytes]
    tensors = params.tensors()
    out.append(struct.pack("<I", len(tensors)))
    for t in tensors:
        out.append(struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        out.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return b"".join(out)


def save_checkpoint(path, params, meta=None):
    Path(path).write_bytes(dumps(params, meta))
    return Path(path)


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise DataFormatError(f"truncated checkpoint while reading {what}", self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def loads(raw, expected_hash=None):
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise DataFormatError("not a WTKR checkpoint (bad magic)", 0)
    version = r.u32("version")
    if version != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version} (reader supports {VERSION})", 4)
    mlen = r.u32("metadata length")
    try:
        meta = json.loads(r.take(mlen, "metadata").decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataFormatError("metadata is not valid JSON", 12) from None
    count = r.u32("tensor count")
    tensors = []
    for _ in range(count):
        ndim = r.u32("tensor rank")
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, "tensor shape"))
        n = int(np.prod(dims))
        data = np.frombuffer(r.take(8 * n, "tensor data"), dtype="<f8").astype(float)
        tensors.append(data.reshape(dims))
    if r.pos != len(raw):
        raise DataFormatError("trailing bytes after the last tensor", r.pos)
    if count % 2:
        raise DataFormatError("tensor count must be even (weight/bias pairs)", 0)
    if expected_hash is not None and meta.get("config_hash") != expected_hash:
        warnings.warn(
            f"checkpoint config hash {meta.get('config_hash')} differs from {expected_hash}",
            stacklevel=2,
        )
    params = ModelParams(
        tensors[0::2],
        tensors[1::2],
        head=meta.get("head", "softmax"),
        activation=meta.get("activation", "softplus"),
        meta=meta,
    )
    return params, meta


def load_checkpoint(path, expected_hash=None):
    return loads(Path(path).read_bytes(), expected_hash)
