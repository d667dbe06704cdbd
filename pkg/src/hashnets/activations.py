"""Scalar activation functions with the metadata other modules need."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

_KINDS = ("relu", "leaky-relu", "linear", "tanh")


@dataclass(frozen=True)
class Activation:
    """``phi(a) = scale * base(a)``.

    ``scale`` implements the per-layer ``1/sqrt(width)`` normalisation;
    ``alpha`` is the negative-side slope of the leaky ReLU.
    """

    kind: str = "relu"
    alpha: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidInputError(f"unknown activation {self.kind!r}; choose from {_KINDS}")
        if self.kind == "leaky-relu" and not 0 <= self.alpha < 1:
            raise InvalidInputError(f"leaky slope must lie in [0, 1), got {self.alpha}")
        if not self.scale > 0:
            raise InvalidInputError("scale must be positive")

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        if self.kind == "relu":
            out = np.maximum(a, 0.0)
        elif self.kind == "leaky-relu":
            out = np.where(a > 0, a, self.alpha * a)
        elif self.kind == "linear":
            out = a
        else:
            out = np.tanh(a)
        return out if self.scale == 1.0 else self.scale * out

    def derivative(self, a):
        """phi'(a); the ReLU family uses the value on the negative side at 0."""
        a = np.asarray(a, dtype=float)
        if self.kind == "relu":
            d = (a > 0).astype(float)
        elif self.kind == "leaky-relu":
            d = np.where(a > 0, 1.0, self.alpha)
        elif self.kind == "linear":
            d = np.ones_like(a)
        else:
            d = 1.0 - np.tanh(a) ** 2
        return d if self.scale == 1.0 else self.scale * d

    @property
    def lipschitz(self) -> float:
        return self.scale  # every base function here is 1-Lipschitz

    @property
    def piecewise_linear(self) -> bool:
        return self.kind != "tanh"

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Points where phi' jumps."""
        return (0.0,) if self.kind in ("relu", "leaky-relu") else ()

    @property
    def growth_power(self) -> int:
        """p with |phi(a)| <= C |a|^p; 1 for every supported activation."""
        return 1

    def scaled(self, scale: float) -> "Activation":
        return Activation(self.kind, self.alpha, scale)


RELU = Activation("relu")


def parse_activation(name: str) -> Activation:
    """``relu``, ``linear``, ``tanh``, ``leaky-relu`` or ``leaky-relu:<alpha>``."""
    if name.startswith("leaky-relu"):
        _, _, alpha = name.partition(":")
        return Activation("leaky-relu", float(alpha) if alpha else 0.01)
    return Activation(name)
