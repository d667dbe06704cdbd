"""Sparse sketching matrices and empirical subspace-embedding distortion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError
from .hashing import kwise_hash_new, sign_hash_new
from .linalg import Rng

KINDS = ("count-sketch", "sparse-embedding", "identity")


@dataclass(frozen=True, eq=False)
class SketchMatrix:
    """An s x n sketch stored column-wise.

    ``rows[j]`` and ``values[j]`` hold the row indices and signed values of the
    nonzeros in column ``j`` (the same number in every column).
    """

    kind: str
    s: int
    n: int
    rows: np.ndarray  # n x t int64
    values: np.ndarray  # n x t float64

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown sketch kind {self.kind!r}")
        rows = np.asarray(self.rows, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if rows.ndim == 1:
            rows, values = rows[:, None], values[:, None]
        if rows.shape != values.shape or rows.shape[0] != self.n:
            raise InvalidInputError("rows/values must both be n x t")
        if rows.size and (rows.min() < 0 or rows.max() >= self.s):
            raise InvalidInputError(f"row indices must lie in [0, {self.s})")
        for a in (rows, values):
            a.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "values", values)

    @property
    def per_column(self) -> int:
        return self.rows.shape[1]

    @cached_property
    def sparse(self) -> sp.csr_matrix:
        cols = np.repeat(np.arange(self.n), self.per_column)
        return sp.csr_matrix(
            (self.values.ravel(), (self.rows.ravel(), cols)), shape=(self.s, self.n)
        )

    def dense(self) -> np.ndarray:
        """Materialise as a dense array; meant for small n only."""
        return self.sparse.toarray()

    @classmethod
    def count_sketch(cls, buckets, signs, s: int) -> "SketchMatrix":
        """Count-Sketch with explicit row hash ``buckets`` and ``signs``."""
        buckets = np.asarray(buckets, dtype=np.int64)
        signs = np.asarray(signs, dtype=float)
        if not np.all(np.abs(signs) == 1):
            raise InvalidInputError("signs must be +-1")
        return cls("count-sketch", s, buckets.size, buckets, signs)


def count_sketch_new(s: int, n: int, rng: Rng) -> SketchMatrix:
    """Pairwise-independent row hash, 4-wise independent signs."""
    if s < 1 or n < 1:
        raise InvalidInputError(f"need s, n >= 1, got s={s}, n={n}")
    h = kwise_hash_new(2, n, s, rng.spawn(0))
    sigma = sign_hash_new(n, rng.spawn(1))
    return SketchMatrix.count_sketch(h.table, sigma.table, s)


def _partial_fisher_yates(s: int, n: int, t: int, gen: np.random.Generator) -> np.ndarray:
    """For each of n columns, the first t entries of a shuffled ``range(s)``."""
    draws = np.stack([gen.integers(i, s, size=n) for i in range(t)], axis=1)
    out = np.empty((n, t), dtype=np.int64)
    for col in range(n):
        swapped: dict[int, int] = {}
        for i in range(t):
            r = int(draws[col, i])
            out[col, i] = swapped.get(r, r)
            swapped[r] = swapped.get(i, i)
    return out


def sparse_embedding_new(s: int, n: int, t: int, rng: Rng) -> SketchMatrix:
    """t nonzeros of value +-1/sqrt(t) per column, in distinct rows."""
    if s < 1 or n < 1:
        raise InvalidInputError(f"need s, n >= 1, got s={s}, n={n}")
    if not 1 <= t <= s:
        raise InvalidInputError(f"need 1 <= t <= s, got t={t}, s={s}")
    gen = rng.generator()
    rows = _partial_fisher_yates(s, n, t, gen)
    signs = gen.integers(0, 2, size=(n, t)) * 2.0 - 1.0
    return SketchMatrix("sparse-embedding", s, n, rows, signs / math.sqrt(t))


def identity_sketch(n: int) -> SketchMatrix:
    return SketchMatrix("identity", n, n, np.arange(n), np.ones(n))


def sketch_apply_matrix(S: SketchMatrix, U) -> np.ndarray:
    """``S @ U`` for an n x d (or length-n) array."""
    U = np.asarray(U, dtype=float)
    if U.shape[0] != S.n:
        raise InvalidInputError(f"sketch has n={S.n} columns, input has {U.shape[0]} rows")
    if S.kind == "identity":
        return np.array(U, copy=True)  # keeps the memory layout, so products round identically
    return S.sparse @ U


def sketch_apply(S: SketchMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("sketch_apply expects a vector")
    return sketch_apply_matrix(S, x[:, None])[:, 0]


def sketch_apply_transpose(S: SketchMatrix, y) -> np.ndarray:
    """``S.T @ y`` for a length-s vector or s x d array."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] != S.s:
        raise InvalidInputError(f"sketch has s={S.s} rows, input has {y.shape[0]}")
    if S.kind == "identity":
        return y.copy()
    return S.sparse.T @ y


def sketch_gram_apply(S: SketchMatrix, X) -> np.ndarray:
    """``S.T @ S @ X``; identity sketches return X unchanged."""
    X = np.asarray(X, dtype=float)
    if S.kind == "identity":
        if X.shape[0] != S.n:
            raise InvalidInputError(f"sketch has n={S.n} columns, input has {X.shape[0]} rows")
        return X
    return sketch_apply_transpose(S, sketch_apply_matrix(S, X))


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """n x d matrix with orthonormal columns."""

    U: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        if U.ndim != 2 or U.shape[1] < 1 or U.shape[1] > U.shape[0]:
            raise InvalidInputError(f"basis must be n x d with 1 <= d <= n, got {U.shape}")
        if not np.allclose(U.T @ U, np.eye(U.shape[1]), atol=1e-8, rtol=0):
            raise InvalidInputError("basis columns are not orthonormal")
        U.setflags(write=False)
        object.__setattr__(self, "U", U)

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def d(self) -> int:
        return self.U.shape[1]


def random_basis(n: int, d: int, rng: Rng) -> SubspaceBasis:
    """Orthonormal basis of a uniformly random d-dimensional subspace."""
    if not 1 <= d <= n:
        raise InvalidInputError(f"need 1 <= d <= n, got d={d}, n={n}")
    G = rng.generator().standard_normal((n, d))
    Q, R = np.linalg.qr(G)
    return SubspaceBasis(Q * np.sign(np.diag(R)))


def unit_sphere(count: int, d: int, gen: np.random.Generator) -> np.ndarray:
    Z = gen.standard_normal((count, d))
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


@dataclass(frozen=True)
class Distortion:
    norm: float  # max |‖Sx‖² − 1| over sampled unit x
    inner: float  # max |<Sx, Sx'> − <x, x'>| over sampled pairs
    exact: float  # sup over the unit sphere of the subspace: ‖(SU)ᵀSU − UᵀU‖₂


def distortion(S: SketchMatrix, basis: SubspaceBasis, pairs: int, rng: Rng) -> Distortion:
    """Sample ``pairs`` unit vectors x_i = U z_i and pair x_i with x_{i+1} cyclically.

    Every quantity is evaluated through ``E = (SU)ᵀ(SU) − UᵀU``, since
    ``‖Sx‖² − ‖x‖² = zᵀEz`` and ``<Sx,Sx'> − <x,x'> = zᵀEz'`` for x = Uz.
    """
    if S.n != basis.n:
        raise InvalidInputError(f"sketch has n={S.n}, basis has {basis.n} rows")
    if pairs < 1:
        raise InvalidInputError("pairs must be >= 1")
    SU = sketch_apply_matrix(S, basis.U)
    E = SU.T @ SU - basis.U.T @ basis.U
    Z = unit_sphere(pairs, basis.d, rng.generator())
    EZ = Z @ E
    norm = np.abs(np.einsum("ij,ij->i", EZ, Z))
    inner = np.abs(np.einsum("ij,ij->i", EZ, np.roll(Z, -1, axis=0)))
    exact = float(np.max(np.abs(np.linalg.eigvalsh(E))))
    return Distortion(float(norm.max()), float(inner.max()), exact)


def suggest_sketch_rows(kind: str, d: int, eps: float, delta: float, c: float = 1.0) -> int:
    """Row count with the hidden constant set to ``c``.

    count-sketch: ``c d^2 / (delta eps^2)``; sparse-embedding:
    ``c d ln^2(d/(eps delta)) / eps^2``. The value is rounded to 9 significant
    digits before the ceiling so float noise such as 4000.0000000000005 does
    not add a row.
    """
    if not (0 < eps < 1 and 0 < delta < 1):
        raise InvalidInputError(f"need 0 < eps, delta < 1, got eps={eps}, delta={delta}")
    if d < 1:
        raise InvalidInputError("d must be >= 1")
    if kind == "count-sketch":
        raw = c * d * d / (delta * eps * eps)
    elif kind == "sparse-embedding":
        raw = c * d * math.log(d / (eps * delta)) ** 2 / (eps * eps)
    else:
        raise InvalidInputError(f"no row formula for kind {kind!r}")
    return max(1, math.ceil(float(f"{raw:.9g}")))
