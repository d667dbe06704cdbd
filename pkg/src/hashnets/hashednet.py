"""One-hidden-layer HashedNets: teachers, risk derivatives, lifting and recovery.

A hashed layer stores B bucket weights ``w`` and an index map ``h`` from the
flattened position ``i*n + j`` of the virtual k x n matrix to a bucket, so that
``W_hat[i, j] = w[h(i*n + j)]``. The model output is
``y = sum_i v_i * phi(W_hat[i] . x)`` and the empirical risk is the mean
``F_S(w) = 1/(2m) sum_s (y_hat_s - y_s)^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import integrate

from .activations import RELU, Activation
from .errors import InvalidInputError, RankDeficientError, UnsupportedActivationError
from .hashing import KWiseHash, default_degree, kwise_hash_new
from .linalg import Rng, singular_values, sym_eig

RANK_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class HashedLayer:
    n: int
    k: int
    B: int
    index: np.ndarray  # length k*n, values in [0, B)
    w: np.ndarray  # length B
    hash: KWiseHash | None = None

    def __post_init__(self):
        index = np.asarray(self.index, dtype=np.int64).reshape(-1)
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if index.size != self.k * self.n:
            raise InvalidInputError(f"index must have k*n={self.k * self.n} entries, got {index.size}")
        if index.size and (index.min() < 0 or index.max() >= self.B):
            raise InvalidInputError(f"index values must lie in [0, {self.B})")
        if w.size != self.B:
            raise InvalidInputError(f"w must have B={self.B} entries, got {w.size}")
        for a in (index, w):
            a.setflags(write=False)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_hash(cls, h: KWiseHash, n: int, k: int, w) -> "HashedLayer":
        if h.domain_size != n * k:
            raise InvalidInputError(f"hash domain {h.domain_size} != k*n = {k * n}")
        return cls(n, k, h.range_size, h.table, w, h)

    def with_weights(self, w) -> "HashedLayer":
        return HashedLayer(self.n, self.k, self.B, self.index, w, self.hash)

    @property
    def loads(self) -> np.ndarray:
        return np.bincount(self.index, minlength=self.B)


def hashed_layer_new(n: int, k: int, B: int, rng: Rng, w=None, t: int | None = None) -> HashedLayer:
    """Layer with a fresh ``t``-wise hash (default ``ceil(log2(k n))``); zero weights unless given."""
    t = default_degree(k * n) if t is None else t
    h = kwise_hash_new(t, k * n, B, rng)
    return HashedLayer.from_hash(h, n, k, np.zeros(B) if w is None else w)


def expand_virtual(layer: HashedLayer) -> np.ndarray:
    """The k x n virtual matrix ``W_hat[i, j] = w[h(i*n + j)]``."""
    return layer.w[layer.index].reshape(layer.k, layer.n)


@dataclass(frozen=True, eq=False)
class TeacherSpec:
    layer: HashedLayer
    v: np.ndarray
    phi: Activation = RELU

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).reshape(-1)
        if v.size != self.layer.k:
            raise InvalidInputError(f"v must have k={self.layer.k} entries")
        if np.any(v == 0):
            raise InvalidInputError("every output weight must be nonzero")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def w(self) -> np.ndarray:
        return self.layer.w

    @property
    def p(self) -> int:
        return self.phi.growth_power


def sample_teacher(n: int, k: int, B: int, rng: Rng, phi: Activation = RELU, t: int | None = None,
                   max_tries: int = 1000) -> TeacherSpec:
    """Random teacher with a full-rank virtual matrix.

    Hashes are redrawn until every bucket is used and ``sigma_k(W_hat) >
    1e-6 sigma_1``. ``w*`` is Gaussian rescaled so that ``sigma_1(W_hat*) = 1``;
    ``v*`` holds random signs.
    """
    if k > n:
        raise InvalidInputError(f"rank(W_hat) = k needs k <= n, got k={k}, n={n}")
    t = default_degree(k * n) if t is None else t
    for attempt in range(max_tries):
        h = kwise_hash_new(t, k * n, B, rng.spawn(0, attempt))
        layer = HashedLayer.from_hash(h, n, k, rng.spawn(1, attempt).generator().standard_normal(B))
        if np.any(layer.loads == 0):
            continue
        sigma = singular_values(expand_virtual(layer))
        if sigma[-1] <= RANK_TOL * sigma[0]:
            continue
        layer = layer.with_weights(layer.w / sigma[0])
        v = rng.spawn(2).generator().integers(0, 2, size=k) * 2.0 - 1.0
        return TeacherSpec(layer, v, phi)
    raise RankDeficientError(f"no full-rank teacher found in {max_tries} draws (n={n}, k={k}, B={B})")


@dataclass(frozen=True, eq=False)
class SampleSet:
    X: np.ndarray  # m x n
    y: np.ndarray  # m

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.size:
            raise InvalidInputError("X must be m x n with one label per row")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidInputError("samples must be finite")
        for a in (X, y):
            a.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.y.size


def teacher_label(teacher: TeacherSpec, x):
    """``sum_i v_i phi(W_hat_i . x)`` for one input or an m x n batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != teacher.layer.n:
        raise InvalidInputError(f"input must have length {teacher.layer.n}")
    return teacher.phi(x @ expand_virtual(teacher.layer).T) @ teacher.v


def sample_dataset(teacher: TeacherSpec, m: int, rng: Rng) -> SampleSet:
    if m < 1:
        raise InvalidInputError("m must be >= 1")
    X = rng.generator().standard_normal((m, teacher.layer.n))
    return SampleSet(X, teacher_label(teacher, X))


def _index(h, k: int, n: int) -> np.ndarray:
    if isinstance(h, HashedLayer):
        idx = h.index
    elif isinstance(h, KWiseHash):
        idx = h.table
    else:
        idx = np.asarray(h, dtype=np.int64).reshape(-1)
    if idx.size != k * n:
        raise InvalidInputError(f"hash must cover k*n = {k * n} positions, got {idx.size}")
    return idx


def _indicator(index: np.ndarray, B: int) -> sp.csr_matrix:
    """kn x B 0/1 matrix with a one at (c, h(c))."""
    return sp.csr_matrix((np.ones(index.size), (np.arange(index.size), index)), shape=(index.size, B))


def _virtual(w, index, k, n) -> np.ndarray:
    return np.asarray(w, dtype=float)[index].reshape(k, n)


def _setup(w, samples: SampleSet, v, h):
    v = np.asarray(v, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    k, n = v.size, samples.X.shape[1]
    index = _index(h, k, n)
    if index.size and index.max() >= w.size:
        raise InvalidInputError(f"w has {w.size} buckets but the hash reaches {index.max()}")
    return w, v, index, k, n


def empirical_risk(w, samples: SampleSet, v, h, phi: Activation = RELU) -> float:
    w, v, index, k, n = _setup(w, samples, v, h)
    Z = samples.X @ _virtual(w, index, k, n).T
    r = phi(Z) @ v - samples.y
    return float(0.5 * np.mean(r * r))


def risk_gradient(w, samples: SampleSet, v, h, phi: Activation = RELU) -> np.ndarray:
    """``dF_S/dw_p = mean_s r_s sum_i v_i phi'(z_si) sum_{j: h(i,j)=p} x_sj``."""
    w, v, index, k, n = _setup(w, samples, v, h)
    Z = samples.X @ _virtual(w, index, k, n).T
    r = phi(Z) @ v - samples.y
    D = (r[:, None] * phi.derivative(Z) * v).T @ samples.X / samples.m  # k x n, gradient in W_hat
    return np.bincount(index, weights=D.ravel(), minlength=w.size)


def _full_jacobian(W_hat: np.ndarray, X: np.ndarray, v, phi: Activation) -> np.ndarray:
    """m x kn matrix of d y_hat / d W_hat[i, j] per sample."""
    G = phi.derivative(X @ W_hat.T) * v  # m x k
    return (G[:, :, None] * X[:, None, :]).reshape(X.shape[0], -1)


def _require_piecewise_linear(phi: Activation) -> None:
    if not phi.piecewise_linear:
        raise UnsupportedActivationError(
            f"{phi.kind} has phi'' != 0; the Hessian formula needs a piecewise-linear activation"
        )


def risk_hessian(w, samples: SampleSet, v, h, phi: Activation = RELU) -> np.ndarray:
    """B x B Hessian of F_S; with phi'' = 0 it is the average outer product of bucket gradients."""
    _require_piecewise_linear(phi)
    w, v, index, k, n = _setup(w, samples, v, h)
    J = _full_jacobian(_virtual(w, index, k, n), samples.X, v, phi)
    Jh = np.asarray(_indicator(index, w.size).T @ J.T).T  # m x B
    return Jh.T @ Jh / samples.m


def full_hessian(W_hat, samples: SampleSet, v, phi: Activation = RELU) -> np.ndarray:
    """kn x kn Hessian of the unshared one-hidden-layer risk at ``W_hat`` (flattened row-major)."""
    _require_piecewise_linear(phi)
    W_hat = np.asarray(W_hat, dtype=float)
    J = _full_jacobian(W_hat, samples.X, np.asarray(v, dtype=float), phi)
    return J.T @ J / samples.m


def lift_vector(a, h, k: int, n: int) -> np.ndarray:
    """``b[i*n + j] = a[h(i*n + j)]``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    index = _index(h, k, n)
    if index.size and index.max() >= a.size:
        raise InvalidInputError(f"a has {a.size} entries but the hash reaches bucket {index.max()}")
    return a[index]


@dataclass(frozen=True)
class ReductionCheck:
    max_rel_error: float
    hashed: np.ndarray  # a^T H_hash a per trial
    lifted: np.ndarray  # b^T H_full b per trial


def hessian_reduction_check(teacher: TeacherSpec, samples: SampleSet, trials: int = 100,
                            rng: Rng | None = None, vectors=None) -> ReductionCheck:
    """Compare ``a^T H_hash(w*) a`` with ``lift(a)^T H_full(W_hat*) lift(a)``.

    Random Gaussian ``a`` are drawn unless ``vectors`` (rows) are given.
    """
    layer = teacher.layer
    if vectors is None:
        rng = Rng(0) if rng is None else rng
        vectors = rng.generator().standard_normal((trials, layer.B))
    A = np.atleast_2d(np.asarray(vectors, dtype=float))
    Hh = risk_hessian(layer.w, samples, teacher.v, layer.index, teacher.phi)
    Hf = full_hessian(expand_virtual(layer), samples, teacher.v, teacher.phi)
    Bm = np.stack([lift_vector(a, layer.index, layer.k, layer.n) for a in A])
    hashed = np.einsum("ti,ij,tj->t", A, Hh, A)
    lifted = np.einsum("ti,ij,tj->t", Bm, Hf, Bm)
    scale = np.maximum(np.abs(hashed), np.abs(lifted))
    rel = np.divide(np.abs(hashed - lifted), scale, out=np.zeros_like(scale), where=scale > 0)
    return ReductionCheck(float(rel.max()), hashed, lifted)


# ---------------------------------------------------------------------------
# Gaussian moments of phi'


def _moments_piecewise(phi: Activation, sigma: float) -> np.ndarray:
    """Adaptive quadrature on each interval where phi'(sigma z) is constant."""
    cuts = sorted({b / sigma for b in phi.breakpoints})
    edges = [-np.inf, *cuts, np.inf]
    pdf = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)  # noqa: E731
    out = np.zeros(5)
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi) if np.isfinite(lo) and np.isfinite(hi) else (hi - 1 if np.isfinite(hi) else lo + 1)
        d = float(phi.derivative(sigma * mid))
        for q in range(3):
            val, _ = integrate.quad(lambda z: z**q * pdf(z), lo, hi, epsabs=1e-14, epsrel=1e-12)
            out[q] += d * val
            if q != 1:
                out[3 + q // 2] += d * d * val
    return out


def _moments_smooth(phi: Activation, sigma: float, rtol: float = 1e-10) -> np.ndarray:
    """Gauss-Hermite (probabilists') rule, doubling nodes until two rules agree.

    numpy's node computation overflows somewhere past 300 nodes, so the
    doubling stops at 256.
    """
    prev = None
    deg = 16
    while deg <= 256:
        z, wt = np.polynomial.hermite_e.hermegauss(deg)
        wt = wt / math.sqrt(2 * math.pi)
        d = phi.derivative(sigma * z)
        cur = np.array([wt @ d, wt @ (d * z), wt @ (d * z * z), wt @ (d * d), wt @ (d * d * z * z)])
        if prev is not None and np.all(np.abs(cur - prev) <= rtol * np.maximum(np.abs(cur), 1e-300) + 1e-15):
            return cur
        prev, deg = cur, deg * 2
    return prev


@dataclass(frozen=True)
class GaussianMoments:
    alpha0: float
    alpha1: float
    alpha2: float
    beta0: float
    beta2: float

    @property
    def rho(self) -> float:
        a0, a1, a2, b0, b2 = self.alpha0, self.alpha1, self.alpha2, self.beta0, self.beta2
        return min(b0 - a0 * a0 - a1 * a1, b2 - a1 * a1 - a2 * a2, a0 * a2 - a1 * a1)


def gaussian_moments(phi: Activation, sigma: float) -> GaussianMoments:
    """``alpha_q = E[phi'(sigma z) z^q]`` and ``beta_q = E[phi'(sigma z)^2 z^q]``, z ~ N(0, 1)."""
    if not sigma > 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    vals = _moments_piecewise(phi, sigma) if phi.piecewise_linear else _moments_smooth(phi, sigma)
    return GaussianMoments(*(float(x) for x in vals))


def rho(phi: Activation, sigma: float) -> float:
    return gaussian_moments(phi, sigma).rho


# ---------------------------------------------------------------------------
# Spectral parameters and recovery


@dataclass(frozen=True)
class SpectralParams:
    sigma: np.ndarray
    kappa: float
    lam: float
    v_max: float
    v_min: float
    nu: float
    rho: float
    p: int
    # closed-form bounds with every hidden constant set to 1
    A_min_formula: float
    A_max_formula: float
    m0_formula: float
    M0_formula: float
    # extreme eigenvalues of the unshared Hessian at W_hat*, and the step constants built from them
    A_min: float
    A_max: float
    m0: float
    M0: float
    m: int


def spectrum_bounds(teacher: TeacherSpec, samples: SampleSet | None = None, m: int = 20000,
                    rng: Rng | None = None) -> SpectralParams:
    """Condition parameters of a teacher and the strong-convexity / smoothness constants.

    ``A_min``/``A_max`` are the extreme eigenvalues of the unshared Hessian at
    ``W_hat*``, estimated on ``samples`` (or ``m`` fresh Gaussian inputs); the
    ``*_formula`` fields are the closed-form bounds ``v_min^2 rho(sigma_k) /
    (kappa^2 lambda)`` and ``k v_max^2 sigma_1^(2p)``. In both cases
    ``m0 = (kn/(2B)) A_min`` and ``M0 = (2kn/B) A_max``.
    """
    layer = teacher.layer
    k, n, B = layer.k, layer.n, layer.B
    sigma = singular_values(expand_virtual(layer))
    if sigma[k - 1] <= RANK_TOL * sigma[0]:
        raise RankDeficientError(f"sigma_k = {sigma[k - 1]:.3g} is below {RANK_TOL} * sigma_1")
    sk = sigma[k - 1]
    kappa = float(sigma[0] / sk)
    lam = float(math.exp(np.sum(np.log(sigma[:k])) - k * math.log(sk)))
    av = np.abs(teacher.v)
    v_max, v_min = float(av.max()), float(av.min())
    r = rho(teacher.phi, float(sk))
    p = teacher.p
    a_min_f = v_min**2 * r / (kappa**2 * lam)
    a_max_f = k * v_max**2 * float(sigma[0]) ** (2 * p)
    if samples is None:
        samples = sample_dataset(teacher, m, Rng(0) if rng is None else rng)
    eig = sym_eig(full_hessian(expand_virtual(layer), samples, teacher.v, teacher.phi))
    a_max, a_min = float(eig[0]), float(eig[-1])
    lo, hi = k * n / (2 * B), 2 * k * n / B
    return SpectralParams(
        sigma=sigma, kappa=kappa, lam=lam, v_max=v_max, v_min=v_min, nu=v_max / v_min, rho=r, p=p,
        A_min_formula=a_min_f, A_max_formula=a_max_f, m0_formula=lo * a_min_f, M0_formula=hi * a_max_f,
        A_min=a_min, A_max=a_max, m0=lo * a_min, M0=hi * a_max, m=samples.m,
    )


def perturbed_init(w_star, fraction: float, rng: Rng) -> np.ndarray:
    """``w*`` plus a uniformly random direction of length ``fraction * ‖w*‖``."""
    w_star = np.asarray(w_star, dtype=float)
    if fraction < 0:
        raise InvalidInputError(f"fraction must be >= 0, got {fraction}")
    if fraction == 0:
        return w_star.copy()
    u = rng.generator().standard_normal(w_star.size)
    u /= np.linalg.norm(u)
    return w_star + fraction * np.linalg.norm(w_star) * u


@dataclass(frozen=True)
class RecoveryTrace:
    sq_errors: np.ndarray  # ‖w_t − w*‖² for t = 0..T
    ratios: np.ndarray  # sq_errors[t+1] / sq_errors[t]; nan where sq_errors[t] = 0
    step: float
    m0: float
    M0: float
    diverged: bool
    w_final: np.ndarray
    w_star_norm: float

    @property
    def rel_errors(self) -> np.ndarray:
        """‖w_t − w*‖ / ‖w*‖."""
        return np.sqrt(self.sq_errors) / self.w_star_norm

    def non_increasing_fraction(self) -> float:
        steps = np.diff(self.sq_errors)
        return float(np.mean(steps <= 0)) if steps.size else 1.0


def gd_recover(teacher: TeacherSpec, samples: SampleSet, w_init, steps: int,
               step_size: float | None = None, params: SpectralParams | None = None) -> RecoveryTrace:
    """Full-batch gradient descent on F_S from ``w_init``; default step ``1/M0``.

    The run stops early and sets ``diverged`` once the error exceeds ten times
    its starting value.
    """
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    layer = teacher.layer
    params = spectrum_bounds(teacher, samples) if params is None else params
    eta = 1.0 / params.M0 if step_size is None else float(step_size)
    w_star = layer.w
    w = np.array(w_init, dtype=float)
    errs = [float(np.sum((w - w_star) ** 2))]
    diverged = False
    for _ in range(steps):
        w = w - eta * risk_gradient(w, samples, teacher.v, layer.index, teacher.phi)
        e = float(np.sum((w - w_star) ** 2))
        errs.append(e)
        if not np.isfinite(e) or (errs[0] > 0 and e > 10.0 * errs[0]):
            diverged = True
            break
    sq = np.array(errs)
    prev = sq[:-1]
    ratios = np.divide(sq[1:], prev, out=np.full(prev.shape, np.nan), where=prev > 0)
    return RecoveryTrace(sq, ratios, eta, params.m0, params.M0, diverged, w,
                         float(np.linalg.norm(w_star)))
