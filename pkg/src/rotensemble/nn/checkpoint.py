"""Versioned little-endian binary checkpoints for ensemble models.

Layout (all integers unsigned little-endian)::

    b"RENS"  u32 version  u8 has_encoder
    u32 in_dim  u32 k  k*u32 trunk sizes (input features, hidden..., output)
    u32 n  n*u8 head codes
    [encoder] u32 k  k*u32 local sizes  u32 k  k*u32 post sizes
    u32 len  len bytes of UTF-8 JSON (training config, may be empty)
    every parameter array in ``model.params`` order as float64, row-major
"""
from __future__ import annotations

import io
import struct

import numpy as np

from ..errors import InvalidInputError
from ..pointcloud import PointEncoder
from .ensemble import EnsembleModel
from .heads import HeadKind

MAGIC = b"RENS"
VERSION = 1
HEAD_CODES = {kind: i for i, kind in enumerate(HeadKind)}
CODE_HEADS = {i: kind for kind, i in HEAD_CODES.items()}


def _put_sizes(buf, sizes):
    buf.write(struct.pack("<I", len(sizes)))
    buf.write(struct.pack(f"<{len(sizes)}I", *sizes))


def _get(buf, fmt):
    size = struct.calcsize(fmt)
    data = buf.read(size)
    if len(data) != size:
        raise InvalidInputError("truncated checkpoint")
    return struct.unpack(fmt, data)


def _get_sizes(buf):
    (k,) = _get(buf, "<I")
    return list(_get(buf, f"<{k}I"))


def dumps_model(model: EnsembleModel, config_json: str = "") -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IB", VERSION, model.encoder is not None))
    buf.write(struct.pack("<I", model.in_dim))
    _put_sizes(buf, model.net.sizes)
    buf.write(struct.pack("<I", model.n))
    buf.write(bytes(HEAD_CODES[h] for h in model.heads))
    if model.encoder is not None:
        _put_sizes(buf, model.encoder.local)
        _put_sizes(buf, model.encoder.post)
    text = config_json.encode()
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    for p in model.params:
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_model(data: bytes) -> tuple[EnsembleModel, str]:
    """Rebuild a model and return it with the stored config JSON."""
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise InvalidInputError("not a model checkpoint (bad magic)")
    version, has_encoder = _get(buf, "<IB")
    if version != VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {version}")
    (in_dim,) = _get(buf, "<I")
    sizes = _get_sizes(buf)
    (n,) = _get(buf, "<I")
    codes = _get(buf, f"<{n}B")
    try:
        heads = [CODE_HEADS[c] for c in codes]
    except KeyError as exc:
        raise InvalidInputError(f"unknown head code {exc}") from None
    encoder = None
    if has_encoder:
        local, post = _get_sizes(buf), _get_sizes(buf)
        encoder = PointEncoder(local, post)
    (length,) = _get(buf, "<I")
    config_json = buf.read(length).decode()
    model = EnsembleModel(in_dim, sizes[1:-1], heads, encoder=encoder)
    if model.net.sizes != sizes:
        raise InvalidInputError(f"trunk sizes {sizes} do not match the heads")
    for p in model.params:
        raw = buf.read(p.size * 8)
        if len(raw) != p.size * 8:
            raise InvalidInputError("truncated checkpoint")
        p[...] = np.frombuffer(raw, dtype="<f8").reshape(p.shape)
    if buf.read(1):
        raise InvalidInputError("trailing bytes after the parameters")
    return model, config_json


def save_model(path, model: EnsembleModel, config_json: str = ""):
    with open(path, "wb") as fh:
        fh.write(dumps_model(model, config_json))


def load_model(path) -> tuple[EnsembleModel, str]:
    with open(path, "rb") as fh:
        return loads_model(fh.read())
