"""Named-tensor checkpoint files.

Layout (little-endian): magic ``GFCK``, u32 version, u32 tensor count, then per
tensor a u16 name length, the UTF-8 name, u8 rank, one u32 per extent and the
float32 payload in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GFCK"
VERSION = 1


class FormatError(ValueError):
    """File does not follow the expected binary layout."""


class TruncatedError(FormatError):
    pass


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 12:
        raise TruncatedError("truncated payload: header incomplete")
    if buf[:4] != MAGIC:
        raise FormatError(f"format mismatch: expected magic {MAGIC!r}, got {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"format mismatch: unsupported checkpoint version {version}")
    pos, out = 12, {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedError(f"truncated payload at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(buf):
        raise FormatError(f"format mismatch: {len(buf) - pos} trailing bytes")
    return out


def save_checkpoint(tensors: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
