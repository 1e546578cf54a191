"""Dense float64 tensors with gradient buffers, plus their binary format.

The on-disk layout (magic ``PFT1``) is: 4 magic bytes, u32 rank, rank u64
extents, then row-major float64 payload, all little-endian.
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError

_MAGIC = b"PFT1"


class Tensor:
    """A value array and a lazily allocated gradient of the same shape."""

    __slots__ = ("values", "grad")

    def __init__(self, values, copy: bool = True):
        arr = np.array(values, dtype=np.float64, copy=copy, order="C")
        self.values = arr
        self.grad: np.ndarray | None = None

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64), copy=False)

    @classmethod
    def full(cls, shape, fill: float) -> "Tensor":
        return cls(np.full(shape, fill, dtype=np.float64), copy=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad.fill(0.0)

    def add_grad(self, delta: np.ndarray) -> None:
        self.ensure_grad()
        self.grad += delta

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def write_tensor(dest: str | BinaryIO, values: np.ndarray) -> None:
    """Serialize one array in the PFT1 layout to a path or binary stream."""
    # np.ascontiguousarray would promote rank-0 arrays to rank-1 and lose
    # the shape across a round trip.
    arr = np.asarray(values, dtype=np.float64, order="C")
    if isinstance(dest, (str, bytes)):
        with open(dest, "wb") as f:
            write_tensor(f, arr)
        return
    dest.write(_MAGIC)
    dest.write(struct.pack("<I", arr.ndim))
    for extent in arr.shape:
        dest.write(struct.pack("<Q", extent))
    dest.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def read_tensor(src: str | BinaryIO) -> np.ndarray:
    """Read one PFT1 array from a path or binary stream."""
    if isinstance(src, (str, bytes)):
        with open(src, "rb") as f:
            return read_tensor(f)
    magic = src.read(4)
    if magic != _MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}, expected {_MAGIC!r}")
    raw = src.read(4)
    if len(raw) != 4:
        raise FormatError("truncated tensor header")
    (rank,) = struct.unpack("<I", raw)
    if rank > 32:
        raise FormatError(f"implausible tensor rank {rank}")
    shape = []
    for _ in range(rank):
        raw = src.read(8)
        if len(raw) != 8:
            raise FormatError("truncated tensor extents")
        shape.append(struct.unpack("<Q", raw)[0])
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = src.read(8 * count)
    if len(payload) != 8 * count:
        raise FormatError("truncated tensor payload")
    flat = np.frombuffer(payload, dtype="<f8", count=count)
    return flat.reshape(shape).astype(np.float64, copy=True)


def tensor_bytes(values: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, values)
    return buf.getvalue()
