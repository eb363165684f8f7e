"""Bit-exact binary trajectory file format.

Layout (all integers little-endian):

    0-3    ASCII "SAKE"
    4      version (1)
    5      flags (bit 0: mask present)
    6-7    reserved, zero
    8-27   u32 n_traj, T, C, H, W
    ...    n_traj*T*C*H*W float32 values in [traj][time][channel][h][w] order
    ...    H*W bytes of {0, 1} when the mask flag is set
    ...    u32 length + UTF-8 JSON meta
"""

import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

from sake.errors import (
    BadMagicError,
    NonFiniteValueError,
    PoolFormatError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from sake.trajstore.pool import TrajectoryPool

MAGIC = b"SAKE"
FORMAT_VERSION = 1
FLAG_MASK = 0x01

_HEADER = struct.Struct("<4sBBH5I")
_U32 = struct.Struct("<I")
_FLOAT = np.dtype("<f4")

PathLike = Union[str, Path]


def encode_pool(pool: TrajectoryPool) -> bytes:
    """Serialize a pool to bytes."""
    if not np.all(np.isfinite(pool.data)):
        raise NonFiniteValueError("refusing to write non-finite values")
    flags = FLAG_MASK if pool.mask is not None else 0
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, flags, 0, *pool.data.shape),
        pool.data.astype(_FLOAT, copy=False).tobytes(order="C"),
    ]
    if pool.mask is not None:
        parts.append(pool.mask.astype(np.uint8).tobytes(order="C"))
    meta = json.dumps(pool.meta, sort_keys=True).encode("utf-8")
    parts.append(_U32.pack(len(meta)))
    parts.append(meta)
    return b"".join(parts)


def _take(buf: bytes, offset: int, size: int, what: str) -> bytes:
    end = offset + size
    if end > len(buf):
        raise TruncatedPayloadError(
            f"truncated payload: {what} needs bytes {offset}..{end}, file has {len(buf)}"
        )
    return buf[offset:end]


def decode_pool(buf: bytes) -> TrajectoryPool:
    """Parse bytes produced by encode_pool."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic: expected {MAGIC!r}, got {bytes(buf[:4])!r}")
    header = _take(buf, 0, _HEADER.size, "header")
    _, version, flags, reserved, n_traj, T, C, H, W = _HEADER.unpack(header)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}; this build reads {FORMAT_VERSION}")
    if reserved != 0 or flags & ~FLAG_MASK:
        raise PoolFormatError(f"corrupt header: flags={flags:#x}, reserved={reserved:#x}")

    offset = _HEADER.size
    count = n_traj * T * C * H * W
    raw = _take(buf, offset, count * _FLOAT.itemsize, "tensor payload")
    offset += len(raw)
    data = np.frombuffer(raw, dtype=_FLOAT).reshape(n_traj, T, C, H, W)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValueError("payload contains non-finite values")

    mask = None
    if flags & FLAG_MASK:
        raw_mask = _take(buf, offset, H * W, "mask")
        offset += len(raw_mask)
        mask_bytes = np.frombuffer(raw_mask, dtype=np.uint8)
        if np.any(mask_bytes > 1):
            raise PoolFormatError("mask bytes must be 0 or 1")
        mask = mask_bytes.astype(bool).reshape(H, W)

    (meta_len,) = _U32.unpack(_take(buf, offset, _U32.size, "meta length"))
    offset += _U32.size
    meta_raw = _take(buf, offset, meta_len, "meta blob")
    offset += meta_len
    if offset != len(buf):
        raise PoolFormatError(f"{len(buf) - offset} trailing bytes after meta blob")
    try:
        meta = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PoolFormatError(f"meta blob is not valid UTF-8 JSON: {exc}") from exc

    return TrajectoryPool(data=data, meta=meta, mask=mask)


def write_pool(pool: TrajectoryPool, path: PathLike) -> Path:
    """Write a pool to disk and return the path."""
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    filepath.write_bytes(encode_pool(pool))
    return filepath


def read_pool(path: PathLike) -> TrajectoryPool:
    """Read a pool written by write_pool."""
    return decode_pool(Path(path).read_bytes())
