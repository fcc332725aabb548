"""Fixed-point quantization and bit-plane decomposition.

Tensors live as unsigned ``k``-bit integers with the implicit scale
``1 / (2**k - 1)``.  A :class:`BitPlaneSet` holds one packed bit vector per
bit position, plane 0 being the least-significant bit, so that
``value == sum(2**m * plane[m])``.

Binary container (``.pimq``), all integers little-endian::

    offset  size      field
    0       4         magic b"PIMQ"
    4       1         version (u8, currently 1)
    5       1         bit width k (u8, 1..32)
    6       1         rank r (u8)
    7       4*r       dims (u32 each, C order)
    7+4r    4*N       values (u32 each, C order), N = prod(dims)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DomainError, IntegrityError, StructuralError

MAX_BITS = 32
WORD_BITS = 64
PIMQ_MAGIC = b"PIMQ"
PIMQ_VERSION = 1


def _check_bits(k):
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise DomainError(f"bit width must be an integer, got {k!r}")
    if not 1 <= k <= MAX_BITS:
        raise DomainError(f"bit width must be in [1, {MAX_BITS}], got {k}")
    return int(k)


def full_scale(k: int) -> int:
    return (1 << k) - 1


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Unsigned ``bit_width``-bit fixed-point tensor mapped onto [0, 1]."""

    values: np.ndarray
    bit_width: int

    def __post_init__(self):
        k = _check_bits(self.bit_width)
        vals = np.asarray(self.values)
        if vals.dtype.kind not in "ui":
            if vals.size and not np.all(np.equal(np.mod(vals, 1), 0)):
                raise StructuralError("quantized values must be integers")
        if vals.size and (vals.min() < 0 or vals.max() > full_scale(k)):
            raise StructuralError(
                f"values must lie in [0, {full_scale(k)}] for {k}-bit tensor"
            )
        vals = vals.astype(np.uint64, copy=True)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "bit_width", k)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def scale(self) -> float:
        return 1.0 / full_scale(self.bit_width)

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return (
            self.bit_width == other.bit_width
            and self.shape == other.shape
            and bool(np.array_equal(self.values, other.values))
        )

    def __hash__(self):
        return hash((self.bit_width, self.shape, self.values.tobytes()))

    def reshape(self, *shape) -> "QuantizedTensor":
        return QuantizedTensor(self.values.reshape(*shape), self.bit_width)


def _pack(bits: np.ndarray) -> np.ndarray:
    """Pack a flat 0/1 vector into little-endian 64-bit words, zero padded."""
    packed = np.packbits(bits.astype(np.uint8, copy=False), bitorder="little")
    nbytes = -(-bits.size // WORD_BITS) * 8
    out = np.zeros(nbytes, dtype=np.uint8)
    out[: packed.size] = packed
    return out.view("<u8")


def _unpack(words: np.ndarray, size: int) -> np.ndarray:
    raw = np.ascontiguousarray(words, dtype="<u8").view(np.uint8)
    return np.unpackbits(raw, bitorder="little")[:size]


@dataclass(frozen=True, eq=False)
class BitPlaneSet:
    """Packed bit planes of a quantized tensor; ``words[m]`` holds plane ``m``."""

    shape: tuple
    bit_width: int
    words: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        words = np.asarray(self.words, dtype="<u8")
        if words.ndim != 2:
            raise StructuralError("plane words must be a 2-D (planes, words) array")
        size = int(np.prod(shape, dtype=np.int64))
        nwords = -(-size // WORD_BITS)
        if words.shape[1] != nwords:
            raise StructuralError(
                f"expected {nwords} words per plane for {size} elements, got {words.shape[1]}"
            )
        if words.shape[0] != self.bit_width:
            raise StructuralError(
                f"plane count {words.shape[0]} does not match bit width {self.bit_width}"
            )
        _check_bits(self.bit_width)
        pad = nwords * WORD_BITS - size
        if pad and words.size:
            keep = np.uint64((1 << (WORD_BITS - pad)) - 1)
            if np.any(words[:, -1] & ~keep):
                raise StructuralError("padding bits of a bit plane must be zero")
        words = words.copy()
        words.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "words", words)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def plane(self, m: int) -> np.ndarray:
        """Bit ``m`` of every element as a flat uint8 vector."""
        if not 0 <= m < self.bit_width:
            raise IndexError(f"plane {m} out of range for {self.bit_width} planes")
        return _unpack(self.words[m], self.size)

    def planes(self) -> np.ndarray:
        """All planes unpacked, shape ``(bit_width, size)``."""
        return np.stack([self.plane(m) for m in range(self.bit_width)]) if self.bit_width else np.zeros((0, self.size), np.uint8)

    @classmethod
    def from_planes(cls, planes: Sequence[Sequence[int]], shape=None) -> "BitPlaneSet":
        planes = [np.asarray(p) for p in planes]
        if len({p.shape for p in planes}) > 1:
            raise StructuralError("planes must be a list of equal-length bit vectors")
        arr = np.asarray(planes, dtype=np.uint8)
        if arr.ndim != 2:
            raise StructuralError("planes must be a list of equal-length bit vectors")
        if np.any(arr > 1):
            raise StructuralError("bit planes may only hold 0/1")
        shape = (arr.shape[1],) if shape is None else tuple(shape)
        words = np.stack([_pack(p) for p in arr]) if len(arr) else np.zeros((0, 0), "<u8")
        return cls(shape, arr.shape[0], words)


def quantize(real_tensor, k: int) -> QuantizedTensor:
    """Map reals in [0, 1] to ``k``-bit integers, rounding half away from zero."""
    k = _check_bits(k)
    r = np.asarray(real_tensor, dtype=np.float64)
    bad = ~((r >= 0.0) & (r <= 1.0))
    if np.any(bad):
        idx = tuple(int(i) for i in np.unravel_index(int(np.flatnonzero(bad)[0]), r.shape))
        raise DomainError(
            f"quantize input must lie in [0, 1]; element {idx} is {r[idx] if r.ndim else float(r)!r}"
        )
    x = r * full_scale(k)
    lo = np.floor(x)
    # compare the fraction directly; floor(x + 0.5) misrounds just below ties
    q = np.where(x - lo >= 0.5, lo + 1.0, lo)
    return QuantizedTensor(q.astype(np.uint64), k)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.values.astype(np.float64) / full_scale(q.bit_width)


def decompose(q: QuantizedTensor) -> BitPlaneSet:
    flat = q.values.reshape(-1)
    words = np.zeros((q.bit_width, -(-flat.size // WORD_BITS)), dtype="<u8")
    for m in range(q.bit_width):
        words[m] = _pack(((flat >> np.uint64(m)) & np.uint64(1)).astype(np.uint8))
    return BitPlaneSet(q.shape, q.bit_width, words)


def recompose(b: BitPlaneSet) -> QuantizedTensor:
    if b.words.shape[0] != b.bit_width:
        raise StructuralError("plane count does not match bit width")
    acc = np.zeros(b.size, dtype=np.uint64)
    for m in range(b.bit_width):
        acc |= b.plane(m).astype(np.uint64) << np.uint64(m)
    return QuantizedTensor(acc.reshape(b.shape), b.bit_width)


# -- container ----------------------------------------------------------------


def to_bytes(q: QuantizedTensor) -> bytes:
    if q.values.ndim > 255:
        raise StructuralError("rank above 255 cannot be stored")
    header = PIMQ_MAGIC + struct.pack("<BBB", PIMQ_VERSION, q.bit_width, q.values.ndim)
    header += struct.pack(f"<{q.values.ndim}I", *q.shape)
    return header + q.values.astype("<u4").tobytes()


def from_bytes(data: bytes) -> QuantizedTensor:
    if len(data) < 7 or data[:4] != PIMQ_MAGIC:
        raise IntegrityError("not a PIMQ container (bad magic)")
    version, k, rank = struct.unpack_from("<BBB", data, 4)
    if version != PIMQ_VERSION:
        raise IntegrityError(f"unsupported PIMQ version {version}")
    off = 7 + 4 * rank
    if len(data) < off:
        raise IntegrityError("truncated PIMQ header")
    dims = struct.unpack_from(f"<{rank}I", data, 7)
    n = int(np.prod(dims, dtype=np.int64))
    if len(data) != off + 4 * n:
        raise IntegrityError(f"PIMQ payload holds {(len(data) - off) // 4} values, header says {n}")
    values = np.frombuffer(data, dtype="<u4", count=n, offset=off).reshape(dims)
    return QuantizedTensor(values, k)


def save_pimq(path, q: QuantizedTensor) -> None:
    Path(path).write_bytes(to_bytes(q))


def load_pimq(path) -> QuantizedTensor:
    return from_bytes(Path(path).read_bytes())


class FixedPointQuantizer(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`quantize` / :func:`dequantize`.

    ``transform`` returns the stored integers, ``inverse_transform`` the reals
    they represent.  Stateless apart from the validated bit width.
    """

    def __init__(self, bit_width=4):
        self.bit_width = bit_width

    def fit(self, X, y=None):
        self.bit_width_ = _check_bits(self.bit_width)
        self.n_features_in_ = np.asarray(X).shape[-1] if np.ndim(X) else 1
        return self

    def transform(self, X):
        if not hasattr(self, "bit_width_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("FixedPointQuantizer is not fitted")
        return quantize(X, self.bit_width_).values.astype(np.int64)

    def inverse_transform(self, X):
        return dequantize(QuantizedTensor(np.asarray(X), self.bit_width_))
