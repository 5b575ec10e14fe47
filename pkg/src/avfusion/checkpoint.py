"""Flat binary container for named float64 tensors.

Layout (all integers little-endian)::

    magic    8 bytes   b"AVFCKPT1"
    frozen   u8        0 or 1
    count    u32       number of entries
    entry * count:
        name_len  u16
        name      name_len bytes, UTF-8
        ndim      u8
        extents   ndim * u64
        payload   prod(extents) * f64

Entries keep their insertion order. The same container stores model
parameters and preprocessed feature tensors.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .optim import ModelParams

MAGIC = b"AVFCKPT1"
PathLike = Union[str, os.PathLike]


class CheckpointFormatError(ValueError):
    pass


def encode(tensors: Mapping[str, np.ndarray], frozen: bool = False) -> bytes:
    parts = [MAGIC, struct.pack("<BI", int(frozen), len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], bool]:
    if blob[:8] != MAGIC:
        raise CheckpointFormatError("bad magic; not a checkpoint container")
    try:
        frozen, count = struct.unpack_from("<BI", blob, 8)
        pos = 13
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if pos + 8 * n > len(blob):
                raise CheckpointFormatError(f"entry {name!r} truncated")
            out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
    except struct.error as exc:
        raise CheckpointFormatError(f"truncated container: {exc}") from None
    if pos != len(blob):
        raise CheckpointFormatError(f"{len(blob) - pos} trailing bytes after last entry")
    return out, bool(frozen)


def save_tensors(path: PathLike, tensors: Mapping[str, np.ndarray], frozen: bool = False) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(tensors, frozen))
    os.replace(tmp, path)


def load_tensors(path: PathLike) -> tuple[dict[str, np.ndarray], bool]:
    return decode(Path(path).read_bytes())


def save_params(path: PathLike, params: ModelParams) -> None:
    save_tensors(path, params.state(), params.frozen)


def load_params(path: PathLike) -> ModelParams:
    tensors, frozen = load_tensors(path)
    params = ModelParams(tensors)
    if frozen:
        params.freeze()
    return params


def file_sha256(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
