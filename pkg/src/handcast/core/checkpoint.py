"""Tensor and checkpoint serialization.

Tensor files use the "FTR1" format: magic bytes ``F T R 1``, a little-endian
u32 rank, rank u32 dims, then a float32 little-endian payload. Checkpoints are
an ordered archive of (u16 name length, name bytes, FTR1 blob) entries with a
trailing u32 CRC32 of all preceding bytes.
"""

from __future__ import annotations

import io
import struct
import zlib
from pathlib import Path
from typing import Union

import numpy as np

__all__ = ["write_ftr", "read_ftr", "save_checkpoint", "load_checkpoint", "CheckpointError"]

_MAGIC = b"FTR1"


class CheckpointError(IOError):
    """Raised on malformed tensor files or CRC mismatch."""


def _ftr_bytes(array: np.ndarray) -> bytes:
    arr = np.asarray(array, dtype="<f4")
    header = _MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return header + arr.tobytes()  # tobytes always emits C order


def write_ftr(path: Union[str, Path], array: np.ndarray) -> None:
    Path(path).write_bytes(_ftr_bytes(array))


def _read_ftr_stream(buf: io.BufferedIOBase) -> np.ndarray:
    magic = buf.read(4)
    if magic != _MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    (rank,) = struct.unpack("<I", buf.read(4))
    dims = struct.unpack(f"<{rank}I", buf.read(4 * rank)) if rank else ()
    count = int(np.prod(dims)) if rank else 1
    payload = buf.read(4 * count)
    if len(payload) != 4 * count:
        raise CheckpointError("truncated tensor payload")
    arr = np.frombuffer(payload, dtype="<f4", count=count).astype(np.float32)
    return arr.reshape(dims)


def read_ftr(path: Union[str, Path]) -> np.ndarray:
    with open(path, "rb") as fh:
        return _read_ftr_stream(fh)


def save_checkpoint(path: Union[str, Path], params: "dict[str, np.ndarray]") -> None:
    """Write an ordered name->array archive; iteration order is preserved."""
    body = bytearray()
    for name, array in params.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name!r}")
        body += struct.pack("<H", len(encoded))
        body += encoded
        body += _ftr_bytes(array)
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path: Union[str, Path]) -> "dict[str, np.ndarray]":
    """Read an archive back into an ordered name->float32-array dict."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise CheckpointError("checkpoint too short")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"CRC mismatch in {path}")
    out: dict[str, np.ndarray] = {}
    buf = io.BytesIO(body)
    while buf.tell() < len(body):
        (name_len,) = struct.unpack("<H", buf.read(2))
        name = buf.read(name_len).decode("utf-8")
        out[name] = _read_ftr_stream(buf)
    return out
