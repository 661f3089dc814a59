"""Tensor plumbing shared by every module.

Tensors are plain ``numpy.float64`` arrays in C (row-major) order.  Random
draws come from ``numpy.random.Generator`` seeded with PCG64, so a seed fixes
the full sample sequence for a given draw order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"RSF1"


class ShapeError(ValueError):
    """Raised on mismatched or invalid tensor shapes."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def child_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent child seeds for split RNG streams."""
    ss = np.random.SeedSequence(int(seed))
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(n)]


def _check_shape(shape: Sequence[int] | int) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d < 1 for d in shape):
        raise ShapeError(f"invalid shape {shape}: every dimension must be >= 1")
    return shape


def gaussian(rng: np.random.Generator, shape: Sequence[int] | int) -> np.ndarray:
    """I.i.d. standard normal draws of the given shape."""
    return rng.standard_normal(_check_shape(shape))


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def check_same_shape(*arrays: np.ndarray) -> None:
    first = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != first:
            raise ShapeError(f"shape mismatch: {first} vs {np.shape(a)}")


def moments(samples: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise sample mean and unbiased sample variance."""
    if len(samples) < 2:
        raise ValueError("moments needs at least two samples")
    check_same_shape(*samples)
    stack = np.stack([as_tensor(s) for s in samples])
    return stack.mean(axis=0), stack.var(axis=0, ddof=1)


# RSF1: magic, u32 rank, u32 dims, f64 data; all little-endian, row-major.

def encode_tensor(x: np.ndarray) -> bytes:
    x = as_tensor(x)
    if x.ndim == 0:
        x = x.reshape(1)
    header = MAGIC + struct.pack("<I", x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    return header + x.astype("<f8").tobytes(order="C")


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; return it and the next offset."""
    if buf[offset:offset + 4] != MAGIC:
        raise ValueError("not an RSF1 tensor (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    dims = struct.unpack_from(f"<{rank}I", buf, offset + 8)
    start = offset + 8 + 4 * rank
    count = int(np.prod(dims))
    end = start + 8 * count
    if end > len(buf):
        raise ValueError("truncated RSF1 tensor")
    data = np.frombuffer(buf[start:end], dtype="<f8").astype(np.float64)
    return data.reshape(dims), end


def save_tensor(path: str | Path, x: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(x))


def load_tensor(path: str | Path) -> np.ndarray:
    x, _ = decode_tensor(Path(path).read_bytes())
    return x


def operand_scale(*arrays) -> np.ndarray:
    """Elementwise magnitude of the largest operand."""
    return np.maximum.reduce([np.abs(np.asarray(a, dtype=np.float64)) for a in arrays])


def ulp_ratio(a, b, scale) -> float:
    """Worst |a - b| measured in ulps of ``scale``."""
    a, b, scale = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.abs(scale))
    unit = np.spacing(np.maximum(scale, np.finfo(float).tiny))
    return float(np.max(np.abs(a - b) / unit))
