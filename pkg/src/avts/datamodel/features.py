"""Binary feature container.

Layout (little-endian)::

    magic    4 bytes  b"AVTS"
    version  u32      1
    kind     u8       0 acoustic, 1 visual
    rate     f64      frames per second
    frames   u64
    dim      u64
    payload  frames * dim float32, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .types import FeatureSequence

MAGIC = b"AVTS"
VERSION = 1
_HEADER = struct.Struct("<4sIBdQQ")
_KINDS = {"acoustic": 0, "visual": 1}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


class FeatureFileError(ValueError):
    pass


def encode_features(seq: FeatureSequence) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, _KINDS[seq.kind], float(seq.rate_hz), seq.frames, seq.dim)
    return header + np.ascontiguousarray(seq.data, dtype="<f4").tobytes()


def decode_features(buf: bytes) -> FeatureSequence:
    if len(buf) < _HEADER.size:
        raise FeatureFileError("truncated header")
    magic, version, kind, rate, frames, dim = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FeatureFileError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FeatureFileError(f"unsupported version {version}")
    if kind not in _KIND_NAMES:
        raise FeatureFileError(f"unknown kind code {kind}")
    expected = _HEADER.size + 4 * frames * dim
    if len(buf) != expected:
        raise FeatureFileError(f"payload size mismatch: {len(buf)} bytes, expected {expected}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(frames, dim)
    return FeatureSequence(data.astype(np.float32), rate, _KIND_NAMES[kind])


def write_features(path: str | Path, seq: FeatureSequence) -> None:
    Path(path).write_bytes(encode_features(seq))


def read_features(path: str | Path) -> FeatureSequence:
    return decode_features(Path(path).read_bytes())
