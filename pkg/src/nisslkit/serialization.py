"""Binary exchange formats: encoder checkpoints and embedding matrices.

Both formats are little-endian with fixed headers:

checkpoint (magic ``DENC``, version 1):
    magic: 4 bytes | version: u32 | d_img: u32 | d_txt: u32 | d: u32
    logit_scale: f64 | image_projection: d_img*d f32 row-major
    text_projection: d_txt*d f32 row-major

embedding matrix (magic ``EMB1``):
    magic: 4 bytes | n_rows: u32 | n_cols: u32 | data: n*d f32 row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import NisslkitError
from .manifest import atomic_write_bytes

CHECKPOINT_MAGIC = b"DENC"
CHECKPOINT_VERSION = 1
EMBEDDING_MAGIC = b"EMB1"

_CKPT_HEADER = struct.Struct("<4sIIIId")
_EMB_HEADER = struct.Struct("<4sII")


def write_checkpoint(path: str | Path, image_projection: np.ndarray,
                     text_projection: np.ndarray, logit_scale: float) -> None:
    w_img = np.ascontiguousarray(image_projection, dtype="<f4")
    w_txt = np.ascontiguousarray(text_projection, dtype="<f4")
    d_img, d = w_img.shape
    d_txt, d2 = w_txt.shape
    if d != d2:
        raise NisslkitError(f"projection dims disagree: {d} vs {d2}")
    header = _CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                               d_img, d_txt, d, float(logit_scale))
    atomic_write_bytes(path, header + w_img.tobytes() + w_txt.tobytes())


def read_checkpoint(path: str | Path) -> tuple[np.ndarray, np.ndarray, float]:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise NisslkitError(f"{path}: truncated checkpoint")
    magic, version, d_img, d_txt, d, logit_scale = _CKPT_HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise NisslkitError(f"{path}: not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise NisslkitError(f"{path}: unsupported checkpoint version {version}")
    expected = _CKPT_HEADER.size + 4 * d * (d_img + d_txt)
    if len(data) != expected:
        raise NisslkitError(f"{path}: checkpoint size mismatch")
    offset = _CKPT_HEADER.size
    w_img = np.frombuffer(data, dtype="<f4", count=d_img * d, offset=offset)
    offset += 4 * d_img * d
    w_txt = np.frombuffer(data, dtype="<f4", count=d_txt * d, offset=offset)
    return (w_img.reshape(d_img, d).astype(np.float64),
            w_txt.reshape(d_txt, d).astype(np.float64),
            float(logit_scale))


def write_embeddings(path: str | Path, matrix: np.ndarray) -> None:
    mat = np.ascontiguousarray(matrix, dtype="<f4")
    if mat.ndim != 2:
        raise NisslkitError("embedding matrix must be 2-D")
    header = _EMB_HEADER.pack(EMBEDDING_MAGIC, mat.shape[0], mat.shape[1])
    atomic_write_bytes(path, header + mat.tobytes())


def read_embeddings(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _EMB_HEADER.size:
        raise NisslkitError(f"{path}: truncated embedding file")
    magic, n, d = _EMB_HEADER.unpack_from(data)
    if magic != EMBEDDING_MAGIC:
        raise NisslkitError(f"{path}: not an embedding file")
    if len(data) != _EMB_HEADER.size + 4 * n * d:
        raise NisslkitError(f"{path}: embedding size mismatch")
    flat = np.frombuffer(data, dtype="<f4", offset=_EMB_HEADER.size)
    return flat.reshape(n, d).astype(np.float64)
