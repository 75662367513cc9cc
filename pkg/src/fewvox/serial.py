"""Checkpoint container: a small self-describing binary format.

Layout (little-endian throughout):

    magic   b"FVOX"
    u32     format version (currently 1)
    u32     kind length, then utf-8 kind string
    u32     header length, then utf-8 JSON header (sorted keys)
    u32     number of arrays
    per array, in sorted name order:
        u32     name length, then utf-8 name
        u32     dtype length, then utf-8 numpy dtype string
        u32     ndim, then ndim * u64 shape
        u64     payload byte length, then raw array bytes

JSON for the metadata, raw numpy buffers for the tensors: nothing here is
executable, unlike pickle, and the sorted ordering makes writes reproducible.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ValidationError

_MAGIC = b"FVOX"
_VERSION = 1


def _write_bytes(out: list[bytes], payload: bytes) -> None:
    out.append(struct.pack("<I", len(payload)))
    out.append(payload)


def save_blob(
    path: Path | str,
    kind: str,
    header: dict[str, Any],
    arrays: dict[str, np.ndarray],
) -> None:
    """Serialize ``header`` + ``arrays`` to ``path``."""
    out: list[bytes] = [_MAGIC, struct.pack("<I", _VERSION)]
    _write_bytes(out, kind.encode("utf-8"))
    _write_bytes(out, json.dumps(header, sort_keys=True).encode("utf-8"))
    names = sorted(arrays)
    out.append(struct.pack("<I", len(names)))
    for name in names:
        # ascontiguousarray would promote 0-d arrays to 1-d; keep shapes as-is.
        arr = np.asarray(arrays[name])
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        _write_bytes(out, name.encode("utf-8"))
        _write_bytes(out, arr.dtype.str.encode("utf-8"))
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        payload = arr.tobytes()
        out.append(struct.pack("<Q", len(payload)))
        out.append(payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(out))


class _Reader:
    def __init__(self, data: bytes, path: Path) -> None:
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValidationError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def chunk(self) -> bytes:
        return self.take(self.u32())


def load_blob(path: Path | str) -> tuple[str, dict[str, Any], dict[str, np.ndarray]]:
    """Read back a blob written by :func:`save_blob`."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != _MAGIC:
        raise ValidationError(f"{path}: not a fewvox checkpoint")
    version = r.u32()
    if version != _VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    kind = r.chunk().decode("utf-8")
    header = json.loads(r.chunk().decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.chunk().decode("utf-8")
        dtype = np.dtype(r.chunk().decode("utf-8"))
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim)) if ndim else ()
        payload = r.take(r.u64())
        arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return kind, header, arrays


def expect_kind(path: Path | str, kind: str, found: str) -> None:
    if found != kind:
        raise ValidationError(f"{path}: expected a '{kind}' checkpoint, found '{found}'")
