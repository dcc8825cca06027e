"""Dense tensor plumbing shared by the rest of the package.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order. This
module adds the few things numpy does not give us directly: checked
constructors, a seeded generator helper, and the ``TALK`` checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"TALK"  u32 version=1  u32 count
    count x { u32 name_len, utf-8 name, u8 dtype (0=f32, 1=f64),
              u32 rank, rank x u64 extent, raw little-endian payload }
"""

from __future__ import annotations

import os
import struct
from typing import Mapping, Sequence

import numpy as np

MAGIC = b"TALK"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

Tensor = np.ndarray


class ShapeError(ValueError):
    pass


class RangeError(ValueError):
    pass


class FormatError(ValueError):
    """Malformed checkpoint file; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def tensor_new(shape: Sequence[int], fill: float = 0.0, dtype=np.float64) -> Tensor:
    return np.full(_check_shape(shape), fill, dtype=dtype)


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """PCG64 generator; identical seeds give identical streams."""
    return np.random.default_rng(seed)


def tensor_rand_uniform(shape: Sequence[int], lo: float, hi: float,
                        rng: np.random.Generator, dtype=np.float64) -> Tensor:
    if not lo < hi:
        raise RangeError(f"need lo < hi, got [{lo}, {hi})")
    return rng.uniform(lo, hi, size=_check_shape(shape)).astype(dtype, copy=False)


def encode_tensors(tensors: Mapping[str, Tensor]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, t in tensors.items():
        if not name:
            raise ValueError("tensor names must be non-empty")
        arr = np.asarray(t)
        if arr.dtype not in _DTYPE_CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        code = _DTYPE_CODES[arr.dtype]
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BI", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes())
    return b"".join(parts)


def decode_tensors(buf: bytes) -> dict[str, Tensor]:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated file while reading {what}", pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected b'TALK'", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    out: dict[str, Tensor] = {}
    for _ in range(count):
        start = pos
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid utf-8", start + 4) from None
        if not name or name in out:
            raise FormatError(f"empty or duplicate tensor name {name!r}", start + 4)
        code_pos = pos
        code, rank = struct.unpack("<BI", take(5, "dtype/rank"))
        if code not in _CODE_DTYPES:
            raise FormatError(f"unknown dtype code {code}", code_pos)
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "extents"))
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        payload = take(nbytes, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if pos != len(buf):
        raise FormatError("trailing bytes after last tensor", pos)
    return out


def tensor_save(tensors: Mapping[str, Tensor], path: str | os.PathLike) -> None:
    data = encode_tensors(tensors)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def tensor_load(path: str | os.PathLike) -> dict[str, Tensor]:
    with open(path, "rb") as f:
        return decode_tensors(f.read())
