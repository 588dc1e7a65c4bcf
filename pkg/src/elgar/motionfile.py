"""Bit-exact binary motion container.

Layout: magic "ELGR", version u32, fps f32, frame count u32, feature
dim u32, then frame-major little-endian float32 features. Writes go
through a temp file and an atomic rename.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .motion import FEATURE_DIM, MotionSequence

MAGIC = b"ELGR"
VERSION = 1
_HEADER = struct.Struct("<4sIfII")


def write_motion(path: str | Path, seq: MotionSequence) -> None:
    data = seq.features.astype("<f4")
    header = _HEADER.pack(MAGIC, VERSION, float(seq.fps), data.shape[0], data.shape[1])
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(header + data.tobytes())
    tmp.replace(path)


def read_motion(path: str | Path) -> MotionSequence:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise ShapeMismatch(f"{path}: not a motion file")
    magic, version, fps, frames, dim = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise ShapeMismatch(f"{path}: unsupported version {version}")
    if dim != FEATURE_DIM:
        raise ShapeMismatch(f"{path}: feature dim {dim}, expected {FEATURE_DIM}")
    expected = _HEADER.size + 4 * frames * dim
    if len(raw) != expected:
        raise ShapeMismatch(f"{path}: byte length {len(raw)} does not match header")
    feats = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(frames, dim)
    return MotionSequence(float(fps), feats.astype(np.float64))
