"""Dense and hashed multilayer perceptrons for the compression comparison.

Each layer keeps a virtual fan_out x fan_in matrix ``V`` (so ``z = a V^T + b``).
Dense layers store ``V`` directly. Hashed layers store bucket weights ``w`` and
an index map with ``V.flat[o*fan_in + i] = w[index[o*fan_in + i]]``; their
gradient is the dense gradient summed per bucket.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .errors import InvalidConfigError, TrainingDivergedError
from .hashing import default_degree, kwise_hash_new
from .linalg import Rng

VARIANTS = ("hashed", "small", "thin", "full")


@dataclass(frozen=True)
class ArchitectureSpec:
    variant: str
    n_in: int
    hidden: tuple[int, ...]
    n_out: int
    ratio: float
    buckets: tuple[int | None, ...]  # per layer; None means dense

    @property
    def layer_sizes(self) -> tuple[tuple[int, int], ...]:
        dims = (self.n_in, *self.hidden, self.n_out)
        return tuple(zip(dims[:-1], dims[1:]))

    @property
    def weight_count(self) -> int:
        """Trainable weights excluding biases: buckets for hashed layers, fan_in*fan_out otherwise."""
        return sum(
            b if b is not None else fi * fo for (fi, fo), b in zip(self.layer_sizes, self.buckets)
        )


def size_match(variant: str, n_in: int, k_hidden: int, ratio: float, n_out: int = 10,
               hash_first_only: bool = False) -> ArchitectureSpec:
    """Architecture with roughly the weight budget of a hashed net at ``ratio``.

    hashed: one hidden layer of k with ``ceil(n_in k / r)`` and ``ceil(k n_out / r)``
    buckets. small: one dense hidden layer of ``ceil(k / r)``. thin: the hashed
    net with its first layer replaced by a dense bottleneck of
    ``ceil(n_in k / ((n_in + k) r))`` units. full: the uncompressed net.
    """
    if variant not in VARIANTS:
        raise InvalidConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if not ratio >= 1:
        raise InvalidConfigError(f"compression ratio must be >= 1, got {ratio}")
    if min(n_in, k_hidden, n_out) < 1:
        raise InvalidConfigError("layer sizes must be positive")
    b2 = None if hash_first_only else math.ceil(k_hidden * n_out / ratio)
    if variant == "hashed":
        hidden = (k_hidden,)
        buckets = (math.ceil(n_in * k_hidden / ratio), b2)
    elif variant == "small":
        hidden = (math.ceil(k_hidden / ratio),)
        buckets = (None, None)
    elif variant == "thin":
        hidden = (math.ceil(n_in * k_hidden / ((n_in + k_hidden) * ratio)), k_hidden)
        buckets = (None, None, b2)
    else:
        hidden = (k_hidden,)
        buckets = (None, None)
    if min(hidden) < 1 or any(b is not None and b < 1 for b in buckets):
        raise InvalidConfigError(f"{variant} architecture has an empty layer: {hidden}, {buckets}")
    return ArchitectureSpec(variant, n_in, hidden, n_out, float(ratio), buckets)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 50
    lr: float = 0.05
    lr_decay: str = "inv-sqrt"  # lr / sqrt(epoch), or "none"
    momentum: float = 0.9
    keep: float = 0.9  # dropout keep probability on hidden activations
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidConfigError("epochs must be >= 0 and batch size >= 1")
        if not 0 < self.keep <= 1:
            raise InvalidConfigError(f"keep probability must lie in (0, 1], got {self.keep}")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise InvalidConfigError("need lr >= 0 and momentum in [0, 1)")
        if self.lr_decay not in ("inv-sqrt", "none"):
            raise InvalidConfigError(f"unknown lr decay {self.lr_decay!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for the 1-based ``epoch``."""
        return self.lr / math.sqrt(epoch) if self.lr_decay == "inv-sqrt" else self.lr


@dataclass
class Layer:
    fan_in: int
    fan_out: int
    weights: np.ndarray  # fan_out x fan_in (dense) or B buckets (hashed)
    bias: np.ndarray
    index: np.ndarray | None = None

    @property
    def hashed(self) -> bool:
        return self.index is not None

    def virtual(self) -> np.ndarray:
        if self.index is None:
            return self.weights
        return self.weights[self.index].reshape(self.fan_out, self.fan_in)

    def reduce_grad(self, gV: np.ndarray) -> np.ndarray:
        if self.index is None:
            return gV
        return np.bincount(self.index, weights=gV.ravel(), minlength=self.weights.size)


@dataclass
class Model:
    layers: list[Layer]

    def params(self) -> list[np.ndarray]:
        return [p for L in self.layers for p in (L.weights, L.bias)]

    def logits(self, X: np.ndarray) -> np.ndarray:
        a = X
        for L in self.layers[:-1]:
            a = np.maximum(a @ L.virtual().T + L.bias, 0.0)
        last = self.layers[-1]
        return a @ last.virtual().T + last.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def error(self, data: Dataset) -> float:
        if data.m == 0:
            return 0.0
        return float(np.mean(self.predict(data.features) != data.labels))

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray, keep: float = 1.0,
                       gen: np.random.Generator | None = None) -> tuple[float, list[np.ndarray]]:
        """Mean softmax cross-entropy and its gradient, with inverted dropout on hidden units."""
        acts, masks = [X], []
        a = X
        for L in self.layers[:-1]:
            a = np.maximum(a @ L.virtual().T + L.bias, 0.0)
            if keep < 1.0:
                mask = (gen.random(a.shape) < keep) / keep
                a = a * mask
            else:
                mask = None
            masks.append(mask)
            acts.append(a)
        last = self.layers[-1]
        z = a @ last.virtual().T + last.bias
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        m = X.shape[0]
        loss = float(-np.mean(logp[np.arange(m), y]))
        d = np.exp(logp)
        d[np.arange(m), y] -= 1.0
        d /= m
        grads: list[np.ndarray] = []
        for li in range(len(self.layers) - 1, -1, -1):
            L = self.layers[li]
            a_prev = acts[li]
            grads[:0] = [L.reduce_grad(d.T @ a_prev), d.sum(axis=0)]
            if li:
                d = d @ L.virtual()
                if masks[li - 1] is not None:
                    d = d * masks[li - 1]
                d = d * (a_prev > 0)
        return loss, grads


def build_model(arch: ArchitectureSpec, rng: Rng, indices=None) -> Model:
    """Glorot-uniform weights (buckets use the bound of their virtual layer), zero biases.

    Hashed layers draw a ``ceil(log2(fan_in fan_out))``-wise hash unless
    ``indices[l]`` supplies the index map for layer l.
    """
    layers = []
    for li, ((fi, fo), B) in enumerate(zip(arch.layer_sizes, arch.buckets)):
        bound = math.sqrt(6.0 / (fi + fo))
        gen = rng.spawn(li, 0).generator()
        if B is None:
            layers.append(Layer(fi, fo, gen.uniform(-bound, bound, size=(fo, fi)), np.zeros(fo)))
            continue
        if indices is not None and indices[li] is not None:
            index = np.asarray(indices[li], dtype=np.int64)
        else:
            index = kwise_hash_new(default_degree(fi * fo), fi * fo, B, rng.spawn(li, 1)).table
        layers.append(Layer(fi, fo, gen.uniform(-bound, bound, size=B), np.zeros(fo), index))
    return Model(layers)


@dataclass
class ExperimentReport:
    variant: str
    train_error: list[float]
    test_error: list[float]
    loss: list[float]  # mean minibatch loss per epoch
    final_test_error: float
    wall_time: float
    weight_count: int
    config: dict
    model: Model | None = field(default=None, repr=False)

    def rows(self) -> list[dict]:
        return [
            {"variant": self.variant, "epoch": e + 1, "loss": self.loss[e],
             "train_error": self.train_error[e], "test_error": self.test_error[e]}
            for e in range(len(self.loss))
        ]


def train_classifier(train: Dataset, arch: ArchitectureSpec, config: TrainConfig,
                     test: Dataset | None = None, model: Model | None = None) -> ExperimentReport:
    """Minibatch SGD with classical momentum ``u <- mu u - lr g; theta <- theta + u``."""
    if train.n != arch.n_in or train.n_classes > arch.n_out:
        raise InvalidConfigError("dataset shape does not fit the architecture")
    root = Rng(config.seed)
    model = build_model(arch, root.spawn(0)) if model is None else model
    params = model.params()
    vel = [np.zeros_like(p) for p in params]
    gen = root.spawn(1).generator()
    test = train.subset(slice(0, 0)) if test is None else test
    report = ExperimentReport(arch.variant, [], [], [], math.nan, 0.0, arch.weight_count, asdict(config), model)
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch)
        order = gen.permutation(train.m)
        losses = []
        for lo in range(0, train.m, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            # overflow shows up as a non-finite loss, which is reported below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = model.loss_and_grads(train.features[idx], train.labels[idx], config.keep, gen)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"{arch.variant}: loss became {loss} in epoch {epoch}, batch starting at {lo}"
                )
            losses.append(loss)
            for p, u, g in zip(params, vel, grads):
                u *= config.momentum
                u -= lr * g
                p += u
        report.loss.append(float(np.mean(losses)) if losses else math.nan)
        report.train_error.append(model.error(train))
        report.test_error.append(model.error(test))
    report.wall_time = time.perf_counter() - start
    report.final_test_error = report.test_error[-1] if report.test_error else model.error(test)
    return report
