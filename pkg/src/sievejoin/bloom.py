"""Bloom and counting Bloom filters, filter sizing and cardinality estimators.

Hashing uses double hashing: two 64-bit words come out of one keyed
splitmix64-style mix of the value, and probe ``i`` lands on
``(h1 + i * h2) mod m``.  Every operation has a vectorised ``*_many`` form
working on numpy ``int64`` arrays; the scalar forms wrap them.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError, PreconditionError, SieveJoinError

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SECOND = np.uint64(0xD6E8FEB86659FD93)

MAGIC_BITS = b"SJBF"
MAGIC_COUNTING = b"SJCB"
FORMAT_VERSION = 1
# magic, version, counter width in bits (1 for plain filters), k, m, seed, n_inserted
_HEADER = struct.Struct("<4sHHIQQQ")
COUNTER_MAX = 255

MAX_BITS = 1 << 40


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_pair(values, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two 64-bit hash words per value, keyed by ``seed``."""
    v = np.asarray(values, dtype=np.int64).view(np.uint64)
    key = _mix(np.array([seed & _MASK64], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        h1 = _mix(v ^ key)
        h2 = _mix(h1 ^ _SECOND)
    return h1, h2


def probe_positions(values, m: int, k: int, seed: int) -> np.ndarray:
    """Cell indexes, shape ``(k, len(values))``."""
    h1, h2 = hash_pair(values, seed)
    a = h1 % np.uint64(m)
    if m > 1:
        b = h2 % np.uint64(m - 1) + np.uint64(1)
    else:
        b = np.zeros_like(a)
    i = np.arange(k, dtype=np.uint64)[:, None]
    return ((a[None, :] + i * b[None, :]) % np.uint64(m)).astype(np.int64)


def _check_shape(m: int, k: int) -> None:
    if not 1 <= m < MAX_BITS:
        raise ParameterError(f"filter size m={m} out of range")
    if not 1 <= k <= 64:
        raise ParameterError(f"hash count k={k} out of range")


class FrozenFilterError(SieveJoinError):
    pass


class _FilterBase:
    m: int
    k: int
    seed: int
    n_inserted: int
    frozen: bool

    def _positions(self, values) -> np.ndarray:
        return probe_positions(np.atleast_1d(np.asarray(values, dtype=np.int64)), self.m, self.k, self.seed)

    def _require_mutable(self) -> None:
        if self.frozen:
            raise FrozenFilterError("filter is frozen; take a copy() to modify it")

    def freeze(self):
        self.frozen = True
        return self

    def insert(self, value: int) -> None:
        self.insert_many(np.array([value], dtype=np.int64))

    def contains(self, value: int) -> bool:
        return bool(self.contains_many(np.array([value], dtype=np.int64))[0])

    def __contains__(self, value) -> bool:
        return self.contains(value)

    def same_shape(self, other) -> bool:
        return (type(self) is type(other) and self.m == other.m
                and self.k == other.k and self.seed == other.seed)

    def theoretical_fpr(self, n: int | None = None) -> float:
        return theoretical_fpr(self.m, self.k, self.n_inserted if n is None else n)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())


class BloomFilter(_FilterBase):
    """Plain Bloom filter over 64-bit integers.

    Bit ``i`` is bit ``i % 8`` of byte ``i // 8`` of ``bits``.
    """

    def __init__(self, m: int, k: int, seed: int = 0):
        _check_shape(m, k)
        self.m = int(m)
        self.k = int(k)
        self.seed = int(seed) & _MASK64
        self.bits = np.zeros((self.m + 7) // 8, dtype=np.uint8)
        self.n_inserted = 0
        self.frozen = False

    @classmethod
    def for_capacity(cls, n: int, p: float = 0.01, seed: int = 0) -> "BloomFilter":
        m, k = size_for_target(max(1, n), p)
        return cls(m, k, seed)

    def __repr__(self) -> str:
        return f"BloomFilter(m={self.m}, k={self.k}, n_inserted={self.n_inserted})"

    def insert_many(self, values) -> None:
        self._require_mutable()
        values = np.asarray(values, dtype=np.int64).reshape(-1)
        if not len(values):
            return
        pos = self._positions(values).ravel()
        if len(pos) * 64 > self.m:
            unpacked = np.unpackbits(self.bits, bitorder="little")
            unpacked[pos] = 1
            self.bits = np.packbits(unpacked, bitorder="little")
        else:
            np.bitwise_or.at(self.bits, pos >> 3, np.left_shift(1, pos & 7).astype(np.uint8))
        self.n_inserted += len(values)

    def contains_many(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.int64).reshape(-1)
        if not len(values):
            return np.zeros(0, dtype=bool)
        pos = self._positions(values)
        hit = (self.bits[pos >> 3] >> (pos & 7).astype(np.uint8)) & 1
        return hit.all(axis=0)

    def bit_array(self) -> np.ndarray:
        return np.unpackbits(self.bits, bitorder="little")[: self.m].astype(bool)

    @property
    def set_bits(self) -> int:
        return int(np.unpackbits(self.bits, bitorder="little")[: self.m].sum())

    @property
    def nbytes(self) -> int:
        return int(self.bits.nbytes)

    def copy(self) -> "BloomFilter":
        f = BloomFilter(self.m, self.k, self.seed)
        f.bits = self.bits.copy()
        f.n_inserted = self.n_inserted
        return f

    def union(self, other: "BloomFilter") -> "BloomFilter":
        """Bitwise OR of two filters built with identical (m, k, seed)."""
        if not self.same_shape(other):
            raise ParameterError("can only merge filters with equal m, k and seed")
        f = self.copy()
        f.bits |= other.bits
        f.n_inserted += other.n_inserted
        return f

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC_BITS, FORMAT_VERSION, 1, self.k, self.m, self.seed, self.n_inserted)
        return header + self.bits.tobytes()


class CountingBloomFilter(_FilterBase):
    """Bloom filter with 8-bit saturating counters, supporting deletion.

    A counter that reaches 255 sticks there and is never decremented.
    """

    def __init__(self, m: int, k: int, seed: int = 0):
        _check_shape(m, k)
        self.m = int(m)
        self.k = int(k)
        self.seed = int(seed) & _MASK64
        self.counters = np.zeros(self.m, dtype=np.uint8)
        self.n_inserted = 0
        self.frozen = False

    @classmethod
    def for_capacity(cls, n: int, p: float = 0.01, seed: int = 0) -> "CountingBloomFilter":
        m, k = size_for_target(max(1, n), p)
        return cls(m, k, seed)

    def __repr__(self) -> str:
        return f"CountingBloomFilter(m={self.m}, k={self.k}, n_inserted={self.n_inserted})"

    def insert_many(self, values) -> None:
        self._require_mutable()
        values = np.asarray(values, dtype=np.int64).reshape(-1)
        if not len(values):
            return
        add = np.bincount(self._positions(values).ravel(), minlength=self.m)
        self.counters = np.minimum(self.counters.astype(np.int64) + add, COUNTER_MAX).astype(np.uint8)
        self.n_inserted += len(values)

    def contains_many(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.int64).reshape(-1)
        if not len(values):
            return np.zeros(0, dtype=bool)
        return (self.counters[self._positions(values)] > 0).all(axis=0)

    def delete(self, value: int) -> None:
        self.delete_many(np.array([value], dtype=np.int64))

    def delete_many(self, values) -> None:
        self._require_mutable()
        values = np.asarray(values, dtype=np.int64).reshape(-1)
        if not len(values):
            return
        present = self.contains_many(values)
        if not present.all():
            missing = values[~present][:5].tolist()
            raise PreconditionError(f"cannot delete values not in the filter: {missing}")
        sub = np.bincount(self._positions(values).ravel(), minlength=self.m)
        c = self.counters.astype(np.int64)
        live = c < COUNTER_MAX
        c[live] -= sub[live]
        # A collision-free delete cannot go negative; clamp guards shared cells.
        self.counters = np.maximum(c, 0).astype(np.uint8)
        self.n_inserted -= len(values)

    def bit_array(self) -> np.ndarray:
        return self.counters > 0

    @property
    def set_bits(self) -> int:
        return int(np.count_nonzero(self.counters))

    @property
    def nbytes(self) -> int:
        return int(self.counters.nbytes)

    def copy(self) -> "CountingBloomFilter":
        f = CountingBloomFilter(self.m, self.k, self.seed)
        f.counters = self.counters.copy()
        f.n_inserted = self.n_inserted
        return f

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC_COUNTING, FORMAT_VERSION, 8, self.k, self.m, self.seed, self.n_inserted)
        return header + self.counters.tobytes()


AnyFilter = BloomFilter | CountingBloomFilter


def filter_from_bytes(data: bytes) -> AnyFilter:
    if len(data) < _HEADER.size:
        raise SieveJoinError("truncated filter file")
    magic, version, width, k, m, seed, n = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise SieveJoinError(f"unsupported filter format version {version}")
    payload = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    if magic == MAGIC_BITS:
        f: AnyFilter = BloomFilter(m, k, seed)
        expected = len(f.bits)
        target = "bits"
    elif magic == MAGIC_COUNTING:
        f = CountingBloomFilter(m, k, seed)
        expected = m
        target = "counters"
    else:
        raise SieveJoinError(f"bad filter magic {magic!r}")
    if len(payload) != expected:
        raise SieveJoinError(f"filter payload is {len(payload)} bytes, expected {expected}")
    setattr(f, target, payload.copy())
    f.n_inserted = n
    return f


def load_filter(path: str | os.PathLike) -> AnyFilter:
    with open(path, "rb") as fh:
        return filter_from_bytes(fh.read())


def size_for_target(n: int, p: float) -> tuple[int, int]:
    """Standard sizing: bits ``m`` and hash count ``k`` for ``n`` items at FPR ``p``."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    if not 0 < p < 1:
        raise ParameterError("p must lie in (0, 1)")
    m = max(1, math.ceil(-n * math.log(p) / math.log(2) ** 2))
    k = max(1, math.floor(m / n * math.log(2) + 0.5))
    return m, k


def theoretical_fpr(m: int, k: int, n: int) -> float:
    return (1.0 - math.exp(-k * n / m)) ** k


def estimate_bits_set(F: float, D: float) -> float:
    """Expected number of set bits after ``D`` distinct inserts with one hash."""
    if F < 1 or D < 0:
        raise DomainError("need F >= 1 and D >= 0")
    return -F * math.expm1(-D / F)


def bits_set_variance(F: int, D: int) -> float:
    """Exact variance of the occupied-cell count for ``D`` uniform throws into ``F`` cells."""
    if D == 0:
        return 0.0
    q1 = (1 - 1 / F) ** D
    q2 = (1 - 2 / F) ** D
    return F * (F - 1) * q2 + F * q1 - F * F * q1 * q1


@dataclass(frozen=True)
class BloomjoinCardinalityInputs:
    SC_T: float
    C_T: float
    D_T: float
    D_S: float
    F: float

    def __post_init__(self):
        if self.C_T == 0:
            return  # reported by the estimator
        if not (0 <= self.SC_T <= self.C_T and self.D_T >= 0 and self.D_S >= 0 and self.F >= 1):
            raise DomainError(f"inconsistent Bloomjoin inputs: {self}")


def estimate_bloomjoin_cardinality(inputs: BloomjoinCardinalityInputs) -> float:
    """Expected size of the probe stream that survives the filter of a Bloomjoin.

    The miss-fraction ``alpha = 1 - SC_T / C_T`` scales the distinct probe
    values that can only pass as false positives.  Like the set-bit
    estimate, this assumes a single hash function.
    """
    if inputs.C_T == 0:
        raise DomainError("C_T = 0: fraction of non-matching tuples is undefined")
    alpha = 1.0 - inputs.SC_T / inputs.C_T
    bits_s = estimate_bits_set(inputs.F, inputs.D_S)
    return inputs.SC_T + bits_s * -math.expm1(-alpha * inputs.D_T / inputs.F)
