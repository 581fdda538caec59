"""Bit-exact binary checkpoints.

Little-endian layout: magic ``WINCKPT1`` (8 bytes), u32 entry count, then
per entry: u32 name length, UTF-8 name, u8 dtype code (0 = float32,
1 = float64), u8 rank, rank x u32 extents, raw row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"WINCKPT1"
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_MAX_ELEMENTS = 2**32  # defensive cap; a corrupt header must not trigger a huge allocation


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointDuplicateNameError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def save_checkpoint(params: dict[str, Tensor], path) -> None:
    """Write named tensors in dict order; round trips are byte-identical."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", len(params))
    for name, tensor in params.items():
        data = np.ascontiguousarray(tensor.data)
        code = _DTYPE_CODES.get(data.dtype.newbyteorder("<"))
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {data.dtype}")
        name_bytes = name.encode("utf-8")
        out += struct.pack("<I", len(name_bytes))
        out += name_bytes
        out += struct.pack("<BB", code, data.ndim)
        out += struct.pack(f"<{data.ndim}I", *data.shape)
        out += data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(
                f"file truncated: needed {n} bytes at offset {self.pos}, have {len(self.blob) - self.pos}"
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def load_checkpoint(path) -> dict[str, Tensor]:
    """Parse a checkpoint into an ordered name -> Tensor dict. Loaded
    tensors are gradient-enabled parameters."""
    blob = Path(path).read_bytes()
    r = _Reader(blob)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointMagicError(f"bad magic in {path}: expected {MAGIC!r}")
    count = r.u32()
    params: dict[str, Tensor] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        if name in params:
            raise CheckpointDuplicateNameError(f"duplicate tensor name {name!r}")
        code = r.u8()
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        dtype = _CODE_DTYPES[code]
        rank = r.u8()
        extents = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        elements = 1
        for e in extents:
            elements *= e
        if elements > _MAX_ELEMENTS:
            raise CheckpointShapeError(f"{name}: shape {extents} overflows the element cap")
        payload = r.take(elements * dtype.itemsize)
        data = np.frombuffer(payload, dtype=dtype).reshape(extents).copy()
        params[name] = Tensor(data.astype(data.dtype.newbyteorder("="), copy=False), requires_grad=True)
    if r.pos != len(blob):
        raise CheckpointError(f"{len(blob) - r.pos} trailing bytes after the last entry")
    return params
