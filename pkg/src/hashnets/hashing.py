"""Polynomial t-wise independent hash families and bucket-load statistics.

A hash of degree t is ``h(x) = ((a_0 + a_1 x + ... + a_{t-1} x^{t-1}) mod p) mod B``
over the Mersenne prime ``p = 2^61 - 1``. Reducing mod p and then mod B leaves
a bias of at most B/p per bucket, which is far below anything measurable at
the sizes used here, so it is left uncorrected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import CapacityError, InvalidInputError
from .linalg import Rng

MERSENNE_61 = (1 << 61) - 1

_P = np.uint64(MERSENNE_61)
_MASK30 = np.uint64((1 << 30) - 1)
_MASK31 = np.uint64((1 << 31) - 1)


def _reduce(x: np.ndarray) -> np.ndarray:
    """Reduce uint64 values below 2^64 modulo 2^61 - 1."""
    x = (x & _P) + (x >> np.uint64(61))
    x = (x & _P) + (x >> np.uint64(61))
    return x - _P * (x >= _P).astype(np.uint64)


def mulmod61(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise ``a*b mod (2^61-1)`` for uint64 inputs already below the prime.

    Both factors are split at bit 31 so every partial product fits in 64 bits;
    the 2^62 and 2^61 carries fold back using ``2^61 = 1 (mod p)``.
    """
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    a1, a0 = a >> np.uint64(31), a & _MASK31
    b1, b0 = b >> np.uint64(31), b & _MASK31
    hi = (a1 * b1) << np.uint64(1)  # a1*b1*2^62 = 2*a1*b1 (mod p)
    mid = a1 * b0 + a0 * b1
    mid = (mid >> np.uint64(30)) + ((mid & _MASK30) << np.uint64(31))
    return _reduce(hi + mid + a0 * b0)


def default_degree(N: int) -> int:
    """Independence degree ``ceil(log2 N)``, at least 1."""
    return max(1, math.ceil(math.log2(N))) if N > 1 else 1


@dataclass(frozen=True, eq=False)
class KWiseHash:
    """Degree-t polynomial hash from ``[domain_size]`` to ``[range_size]``.

    ``coefficients[q]`` multiplies ``x**q``. Instances are immutable; the full
    table of hash values is computed lazily once and then reused.
    """

    coefficients: np.ndarray
    domain_size: int
    range_size: int
    prime: int = MERSENNE_61

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=np.uint64).reshape(-1)
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        if coef.size < 1:
            raise InvalidInputError("a hash needs at least one coefficient")
        if self.domain_size < 1 or self.range_size < 1:
            raise InvalidInputError(
                f"domain and range must be >= 1, got N={self.domain_size}, B={self.range_size}"
            )
        if self.prime != MERSENNE_61:
            raise InvalidInputError("only the prime 2^61-1 is supported")
        if np.any(coef >= _P):
            raise InvalidInputError("coefficients must lie in [0, p)")
        check_capacity(self.domain_size, self.range_size, self.prime)

    @property
    def degree(self) -> int:
        return int(self.coefficients.size)

    def __call__(self, x):
        return hash_eval(self, x)

    def evaluate(self, xs) -> np.ndarray:
        """Vectorised evaluation for an integer array of inputs in ``[0, N)``."""
        xs = np.asarray(xs)
        if xs.size and (xs.min() < 0 or xs.max() >= self.domain_size):
            raise InvalidInputError(f"inputs must lie in [0, {self.domain_size})")
        x = xs.astype(np.uint64)
        acc = np.full(x.shape, self.coefficients[-1], dtype=np.uint64)
        for c in self.coefficients[-2::-1]:
            acc = _reduce(mulmod61(acc, x) + c)
        return (acc % np.uint64(self.range_size)).astype(np.int64)

    @cached_property
    def table(self) -> np.ndarray:
        """``h(x)`` for every ``x`` in the domain, as a read-only int64 array."""
        out = self.evaluate(np.arange(self.domain_size, dtype=np.int64))
        out.setflags(write=False)
        return out


def check_capacity(N: int, B: int, prime: int = MERSENNE_61) -> None:
    if prime <= N or prime <= B * B * N:
        raise CapacityError(f"prime {prime} too small for N={N}, B={B} (needs p > B^2 N)")


def kwise_hash_new(t: int, N: int, B: int, rng: Rng) -> KWiseHash:
    """Draw a hash with ``t`` coefficients uniform in ``[0, p)``."""
    if t < 1 or N < 1 or B < 1:
        raise InvalidInputError(f"need t, N, B >= 1, got t={t}, N={N}, B={B}")
    check_capacity(N, B)
    coef = rng.generator().integers(0, MERSENNE_61, size=t, dtype=np.uint64)
    return KWiseHash(coef, N, B)


def hash_eval(h: KWiseHash, x: int) -> int:
    """Single evaluation with exact Python integer arithmetic."""
    x = int(x)
    if not 0 <= x < h.domain_size:
        raise InvalidInputError(f"x={x} outside domain [0, {h.domain_size})")
    acc = 0
    for c in reversed(h.coefficients.tolist()):
        acc = (acc * x + c) % h.prime
    return acc % h.range_size


@dataclass(frozen=True, eq=False)
class SignHash:
    """Random signs from a 4-wise independent hash with range 2."""

    base: KWiseHash

    @property
    def domain_size(self) -> int:
        return self.base.domain_size

    def evaluate(self, xs) -> np.ndarray:
        return 1 - 2 * self.base.evaluate(xs)

    def __call__(self, x) -> int:
        return 1 - 2 * hash_eval(self.base, x)

    @cached_property
    def table(self) -> np.ndarray:
        out = 1 - 2 * self.base.table
        out.setflags(write=False)
        return out


def sign_hash_new(N: int, rng: Rng, t: int = 4) -> SignHash:
    return SignHash(kwise_hash_new(t, N, 2, rng))


@dataclass(frozen=True, eq=False)
class BucketLoads:
    B: int
    N: int
    loads: np.ndarray

    @property
    def mean(self) -> float:
        return self.N / self.B


def bucket_loads(h: KWiseHash) -> BucketLoads:
    loads = np.bincount(h.table, minlength=h.range_size)
    return BucketLoads(h.range_size, h.domain_size, loads)


@dataclass(frozen=True)
class ConcentrationResult:
    passed: bool
    worst_deviation: float  # max_j |load_j - N/B| / (N/B)
    min_load: int
    max_load: int


def concentration_check(loads: BucketLoads, low: float = 0.9, high: float = 1.1) -> ConcentrationResult:
    """Pass iff every load lies in ``[low*N/B, high*N/B]``."""
    mean = loads.mean
    if mean < 1:
        raise InvalidInputError(f"N/B must be >= 1, got {mean}")
    L = loads.loads
    ok = bool(np.all((L >= low * mean) & (L <= high * mean)))
    dev = float(np.max(np.abs(L - mean)) / mean)
    return ConcentrationResult(ok, dev, int(L.min()), int(L.max()))


def kwise_tail_bound(n: int, k: int, mu: float, a: float) -> tuple[float, float]:
    """Two tail bounds on ``P(|X - mu| > a)`` for a sum X of n k-wise independent
    variables in [0, 1] with mean mu.

    Returns ``(8*((k*mu + k^2)/a^2)^(k/2), 1.1*(n*k/a^2)^(k/2))``, each clamped to [0, 1].
    """
    if k < 2 or k % 2:
        raise InvalidInputError(f"k must be a positive even integer, got {k}")
    if not a > 0:
        raise InvalidInputError(f"a must be > 0, got {a}")
    half = k // 2
    b1 = 8.0 * ((k * mu + k * k) / (a * a)) ** half
    b2 = 1.1 * (n * k / (a * a)) ** half
    return min(1.0, b1), min(1.0, b2)
