"""Dense float64 array primitives, deterministic randomness and latent file I/O.

Arrays are plain ``numpy.ndarray`` values with dtype float64 and C (row-major)
layout; every public operation validates shapes and keeps NaN/Inf from
escaping. Randomness comes from a counter-based SplitMix64 stream so that a
seed fully determines every draw independent of platform or call history.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import DiclError, DimensionError, NumericError

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)

DICL_MAGIC = b"DICL"
DICL_VERSION = 1


def as_tensor(values) -> np.ndarray:
    """Coerce nested sequences or arrays to a contiguous float64 array."""
    return np.ascontiguousarray(np.asarray(values, dtype=np.float64))


def assert_finite(arr: np.ndarray, context: str, step: int | None = None) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {context}", step=step)
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed summation order.

    Each output element accumulates a[i, 0]*b[0, j] + a[i, 1]*b[1, j] + ...
    strictly left to right, so results are bit-identical to a naive triple
    loop and reproducible across BLAS builds.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul needs (m,k)x(k,n), got {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    tmp = np.empty_like(out)
    for j in range(a.shape[1]):
        np.multiply(a[:, j, None], b[j], out=tmp)
        out += tmp
    return assert_finite(out, "matmul result")


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for overflow stability."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] == 0:
        raise DimensionError(f"softmax_rows needs a non-empty 2-d array, got shape {a.shape}")
    assert_finite(a, "softmax_rows input")
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * _MIX_A
    x = (x ^ (x >> np.uint64(27))) * _MIX_B
    return x ^ (x >> np.uint64(31))


class SeededRng:
    """Deterministic generator: SplitMix64 counter stream + Box-Muller normals.

    The i-th raw word is splitmix64(seed + (i+1) * 0x9E3779B97F4A7C15 mod 2^64),
    mapped to a uniform in (0, 1] via its top 53 bits. Each normal consumes
    exactly two uniforms (u1, u2) in stream order and is sqrt(-2 ln u1) *
    cos(2 pi u2); the sine half of the pair is discarded so the stream
    position is a pure function of the number of draws.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return _splitmix64(np.uint64(self.seed) + idx * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n uniforms in (0, 1], each from one 64-bit word."""
        bits = self._raw(n)
        return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

    def normal(self, shape=()) -> np.ndarray:
        """I.i.d. standard normal tensor of the given shape."""
        extents = tuple(int(e) for e in np.atleast_1d(np.asarray(shape, dtype=np.int64)))
        n = 1
        for e in extents:
            if e < 0:
                raise DimensionError(f"negative extent in shape {extents}")
            n *= e
        u = self.uniform(2 * n)
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        out = r * np.cos(2.0 * np.pi * u[1::2])
        return out.reshape(extents)


def normal(rng: SeededRng, shape) -> np.ndarray:
    return rng.normal(shape)


def derive_seed(*parts: str | int) -> int:
    """Collapse a mixed label/seed tuple into one 64-bit stream seed.

    Uses BLAKE2b over a type-tagged encoding, so ("a", 1) and ("a1",) differ.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            h.update(b"s" + part.encode("utf-8") + b"\x00")
        elif isinstance(part, (int, np.integer)):
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True) + b"\x00")
        else:
            raise TypeError(f"seed parts must be str or int, got {type(part).__name__}")
    return int.from_bytes(h.digest(), "little")


def write_dicl(path: str | Path, arr: np.ndarray) -> None:
    """Write a latent to the DICL container.

    Layout: magic ``DICL``, version byte 0x01, u8 rank, rank little-endian u32
    extents, then the row-major little-endian float64 payload.
    """
    arr = as_tensor(arr)
    assert_finite(arr, f"latent written to {path}")
    if arr.ndim > 255:
        raise DiclError(f"rank {arr.ndim} exceeds the u8 rank field")
    for e in arr.shape:
        if e >= 2**32:
            raise DiclError(f"extent {e} exceeds the u32 extent field")
    header = DICL_MAGIC + bytes([DICL_VERSION, arr.ndim])
    header += b"".join(struct.pack("<I", e) for e in arr.shape)
    Path(path).write_bytes(header + arr.astype("<f8").tobytes(order="C"))


def read_dicl(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != DICL_MAGIC:
        raise DiclError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 6:
        raise DiclError(f"{path}: truncated header")
    if blob[4] != DICL_VERSION:
        raise DiclError(f"{path}: unsupported version {blob[4]}")
    rank = blob[5]
    offset = 6 + 4 * rank
    if len(blob) < offset:
        raise DiclError(f"{path}: truncated extent table")
    shape = struct.unpack(f"<{rank}I", blob[6:offset]) if rank else ()
    count = 1
    for e in shape:
        count *= e
    payload = blob[offset:]
    if len(payload) != 8 * count:
        raise DiclError(f"{path}: payload holds {len(payload)} bytes, expected {8 * count}")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return assert_finite(arr, f"latent read from {path}")
