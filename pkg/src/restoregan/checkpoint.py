"""Binary checkpoint container.

Layout, little-endian::

    b"C2GCKPT" + version byte b"1"
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims, f32 values
    u32 config length, config text (same format as the config file)
    u64 step
"""
from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import (
    BadMagicError,
    CheckpointError,
    DuplicateTensorError,
    TruncatedCheckpointError,
    VersionMismatchError,
)

MAGIC_PREFIX = b"C2GCKPT"
VERSION = b"1"


@dataclass
class ModelCheckpoint:
    tensors: dict = field(default_factory=dict)  # name -> float32 ndarray, insertion ordered
    config_text: str = ""
    step: int = 0

    @property
    def config(self) -> cfgmod.TrainConfig:
        return cfgmod.loads(self.config_text)

    def subset(self, prefix: str) -> dict:
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def digest(self, prefix: str = "") -> str:
        h = hashlib.sha256()
        for name, arr in self.tensors.items():
            if name.startswith(prefix):
                h.update(name.encode())
                h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()


def to_bytes(cp: ModelCheckpoint) -> bytes:
    out = [MAGIC_PREFIX + VERSION, struct.pack("<I", len(cp.tensors))]
    for name, arr in cp.tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    cfg = cp.config_text.encode("utf-8")
    out.append(struct.pack("<I", len(cfg)))
    out.append(cfg)
    out.append(struct.pack("<Q", int(cp.step)))
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(f"file ends at byte {len(self.buf)}, needed {self.pos + n}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes) -> ModelCheckpoint:
    if len(buf) < 8:
        if not MAGIC_PREFIX.startswith(buf[:7]):
            raise BadMagicError("not a checkpoint file")
        raise TruncatedCheckpointError("file shorter than its header")
    if buf[:7] != MAGIC_PREFIX:
        raise BadMagicError(f"bad magic {buf[:8]!r}")
    if buf[7:8] != VERSION:
        raise VersionMismatchError(f"unsupported checkpoint version {buf[7:8]!r}")
    r = _Reader(buf)
    r.pos = 8
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"tensor name is not UTF-8: {exc}") from None
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
        if name in tensors:
            raise DuplicateTensorError(f"tensor {name!r} appears twice")
        tensors[name] = values
    (cfg_len,) = r.unpack("<I")
    try:
        cfg_text = r.take(cfg_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"config snapshot is not UTF-8: {exc}") from None
    (step,) = r.unpack("<Q")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after step index")
    return ModelCheckpoint(tensors, cfg_text, step)


def save_checkpoint(cp: ModelCheckpoint, path) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(to_bytes(cp))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> ModelCheckpoint:
    return from_bytes(Path(path).read_bytes())
