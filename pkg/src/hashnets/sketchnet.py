"""Exact and sketched evaluation of deep feed-forward nets on subspace inputs.

Layer j maps ``f^(j-1)`` (length n_j) to ``f^(j) = phi_j(W_j^T f^(j-1))`` where
``W_j`` is stored as an n_j x n_{j+1} array whose columns are the neurons'
weight vectors. The sketched pass inserts ``S_j^T S_j`` before each weight
multiply. Inputs may be a single vector or an m x n_1 batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .activations import Activation
from .errors import InvalidInputError
from .linalg import Rng
from .sketch import (
    SketchMatrix,
    SubspaceBasis,
    count_sketch_new,
    identity_sketch,
    sketch_apply_matrix,
    sketch_gram_apply,
    sparse_embedding_new,
    unit_sphere,
)


@dataclass(frozen=True, eq=False)
class FeedForwardNet:
    weights: tuple[np.ndarray, ...]
    v: np.ndarray
    activations: tuple[Activation, ...]
    B_norm: float = 1.0
    A: float = 1.0

    def __post_init__(self):
        Ws = tuple(np.asarray(W, dtype=float) for W in self.weights)
        v = np.asarray(self.v, dtype=float)
        acts = tuple(self.activations)
        if not Ws:
            raise InvalidInputError("a net needs at least one hidden layer")
        if len(acts) != len(Ws):
            raise InvalidInputError("one activation per hidden layer is required")
        for j in range(1, len(Ws)):
            if Ws[j].shape[0] != Ws[j - 1].shape[1]:
                raise InvalidInputError(f"layer {j + 1} expects {Ws[j].shape[0]} inputs, got {Ws[j - 1].shape[1]}")
        if v.shape != (Ws[-1].shape[1],):
            raise InvalidInputError("output weights must match the last hidden width")
        slack = 1 + 1e-12
        for j, W in enumerate(Ws):
            if np.max(np.linalg.norm(W, axis=0), initial=0.0) > self.B_norm * slack:
                raise InvalidInputError(f"a column of W_{j + 1} exceeds the norm bound {self.B_norm}")
        if np.linalg.norm(v) > self.B_norm * slack:
            raise InvalidInputError(f"output weights exceed the norm bound {self.B_norm}")
        for a in (*Ws, v):
            a.setflags(write=False)
        object.__setattr__(self, "weights", Ws)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "activations", acts)

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def widths(self) -> tuple[int, ...]:
        """(n_1, ..., n_{q+1})."""
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)


def random_net(widths, rng: Rng, normalize: bool = True, kind: str = "relu", A: float = 1.0) -> FeedForwardNet:
    """Gaussian net with unit-norm neuron columns and unit-norm output weights.

    With ``normalize`` each layer's ReLU is scaled by ``1/sqrt(n_{j+1})``.
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or min(widths) < 1:
        raise InvalidInputError(f"need at least two positive widths, got {widths}")
    gen = rng.generator()
    Ws = []
    for a, b in zip(widths[:-1], widths[1:]):
        W = gen.standard_normal((a, b))
        Ws.append(W / np.linalg.norm(W, axis=0))
    v = gen.standard_normal(widths[-1])
    v /= np.linalg.norm(v)
    acts = tuple(
        Activation(kind, scale=1.0 / math.sqrt(b) if normalize else 1.0) for b in widths[1:]
    )
    return FeedForwardNet(tuple(Ws), v, acts, 1.0, A)


@dataclass(frozen=True, eq=False)
class SketchStack:
    """Sketches S_1..S_q for the layer inputs, plus an optional S_{q+1} for the output."""

    sketches: tuple[SketchMatrix, ...]
    output: SketchMatrix | None = None
    eps: tuple[float, ...] = field(default=())

    def check(self, net: FeedForwardNet) -> None:
        widths = net.widths
        if len(self.sketches) != net.depth:
            raise InvalidInputError(f"need {net.depth} layer sketches, got {len(self.sketches)}")
        for j, S in enumerate(self.sketches):
            if S.n != widths[j]:
                raise InvalidInputError(f"S_{j + 1} has n={S.n}, layer input has width {widths[j]}")
        if self.output is not None and self.output.n != widths[-1]:
            raise InvalidInputError(f"output sketch has n={self.output.n}, last width is {widths[-1]}")


def build_stack(net: FeedForwardNet, s: int, rng: Rng, kind: str = "sparse-embedding",
                t: int = 4, sketch_output: bool = True) -> SketchStack:
    """One sketch with s rows per layer; layers with ``s >= width`` get the identity."""

    def make(n: int, j: int) -> SketchMatrix:
        if s >= n:
            return identity_sketch(n)
        if kind == "count-sketch":
            return count_sketch_new(s, n, rng.spawn(j))
        if kind == "sparse-embedding":
            return sparse_embedding_new(s, n, min(t, s), rng.spawn(j))
        raise InvalidInputError(f"unknown sketch kind {kind!r}")

    widths = net.widths
    layers = tuple(make(widths[j], j) for j in range(net.depth))
    out = make(widths[-1], net.depth) if sketch_output else None
    return SketchStack(layers, out)


def identity_stack(net: FeedForwardNet, sketch_output: bool = True) -> SketchStack:
    widths = net.widths
    out = identity_sketch(widths[-1]) if sketch_output else None
    return SketchStack(tuple(identity_sketch(n) for n in widths[:-1]), out)


def _as_batch(net: FeedForwardNet, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = X[None, :] if single else X
    if X.ndim != 2 or X.shape[1] != net.widths[0]:
        raise InvalidInputError(f"input must have length {net.widths[0]}, got shape {np.shape(x)}")
    return X, single


def _unbatch(out: np.ndarray, hidden: list[np.ndarray], single: bool):
    if single:
        return float(out[0]), [h[0] for h in hidden]
    return out, hidden


def forward_exact(net: FeedForwardNet, x):
    """Return ``(<v, f^(q)(x)>, [f^(1), ..., f^(q)])``."""
    F, single = _as_batch(net, x)
    hidden = []
    for W, phi in zip(net.weights, net.activations):
        F = phi(F @ W)
        hidden.append(F)
    return _unbatch(F @ net.v, hidden, single)


def forward_sketched(net: FeedForwardNet, stack: SketchStack, x):
    """Return the sketched output and hidden layers ``f~^(j)``."""
    stack.check(net)
    F, single = _as_batch(net, x)
    hidden = []
    for S, W, phi in zip(stack.sketches, net.weights, net.activations):
        F = phi(sketch_gram_apply(S, F.T).T @ W)
        hidden.append(F)
    if stack.output is None or stack.output.kind == "identity":
        # <Sv, Sf> = <v, f> exactly when S is the identity; reuse the exact
        # pass's arithmetic so the two agree bit for bit.
        out = F @ net.v
    else:
        out = sketch_apply_matrix(stack.output, F.T).T @ sketch_apply_matrix(stack.output, net.v)
    return _unbatch(out, hidden, single)


def sample_subspace_points(basis: SubspaceBasis, A: float, count: int, rng: Rng) -> np.ndarray:
    """``count`` x n array of points ``U z`` with uniform direction and ``‖z‖ ~ U[0, A]``."""
    if not A > 0:
        raise InvalidInputError(f"radius A must be positive, got {A}")
    gen = rng.generator()
    Z = unit_sphere(count, basis.d, gen) * gen.uniform(0.0, A, size=(count, 1))
    return Z @ basis.U.T


def sample_subspace_point(basis: SubspaceBasis, A: float, rng: Rng) -> np.ndarray:
    return sample_subspace_points(basis, A, 1, rng)[0]


@dataclass(frozen=True)
class GapResult:
    max: float
    mean: float
    samples: int


def output_gap(net: FeedForwardNet, stack: SketchStack, basis: SubspaceBasis, A: float,
               samples: int, rng: Rng) -> GapResult:
    """Monte Carlo max and mean of ``|exact - sketched|`` over the ball of radius A in colspan(U)."""
    if basis.n != net.widths[0]:
        raise InvalidInputError(f"basis has {basis.n} rows, net input width is {net.widths[0]}")
    X = sample_subspace_points(basis, A, samples, rng)
    exact, _ = forward_exact(net, X)
    sketched, _ = forward_sketched(net, stack, X)
    gap = np.abs(exact - sketched)
    return GapResult(float(gap.max()), float(gap.mean()), samples)


def gap_bound(q: int, L: float, B_norm: float, A: float, eps_list) -> float:
    """Analytic bound on the output gap.

    q = 2 uses ``2 (sum eps) L^2 B^3 A``; any other depth uses
    ``4 (sum eps) L^q B^(q+1) A^q``. The two constants differ at q = 2 and are
    kept as they are.
    """
    eps = [float(e) for e in eps_list]
    if q < 1 or len(eps) not in (q, q + 1):
        raise InvalidInputError(f"need q >= 1 and q or q+1 epsilons, got q={q}, {len(eps)}")
    total = sum(eps)
    if q == 2:
        return 2.0 * total * L**2 * B_norm**3 * A
    return 4.0 * total * L**q * B_norm ** (q + 1) * A**q


def split_eps(eps: float, q: int, sketch_output: bool = True) -> tuple[float, ...]:
    """Equal share of a total target across the sketched layers."""
    parts = q + 1 if sketch_output else q
    return (eps / parts,) * parts


def _pair_distortion(S: SketchMatrix, F: np.ndarray, Y: np.ndarray) -> float:
    """max over rows f of F and columns y of Y of |<Sf, Sy> - <f, y>| / (‖f‖‖y‖)."""
    nf = np.linalg.norm(F, axis=1)
    ny = np.linalg.norm(Y, axis=0)
    keep_f, keep_y = nf > 0, ny > 0
    if not keep_f.any() or not keep_y.any():
        return 0.0
    F, Y = F[keep_f], Y[:, keep_y]
    diff = sketch_gram_apply(S, F.T).T @ Y - F @ Y
    return float(np.max(np.abs(diff) / np.outer(nf[keep_f], ny[keep_y])))


def measured_layer_eps(net: FeedForwardNet, stack: SketchStack, X) -> tuple[float, ...]:
    """Observed inner-product distortion of each sketch on the vectors it actually meets.

    For layer j that is the sketched hidden vectors ``f~^(j-1)(x)`` against the
    neuron columns of ``W_j``; for the output sketch it is ``f~^(q)(x)`` against v.
    """
    stack.check(net)
    X, _ = _as_batch(net, X)
    F = X
    eps = []
    for S, W, phi in zip(stack.sketches, net.weights, net.activations):
        eps.append(_pair_distortion(S, F, W))
        F = phi(sketch_gram_apply(S, F.T).T @ W)
    if stack.output is not None:
        eps.append(_pair_distortion(stack.output, F, net.v[:, None]))
    return tuple(eps)
