"""Singular-value diagnostics for weight matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import svd

REPORT_COLUMNS = ("sigma_min", "sigma_max", "condition_number", "stable_rank", "full_rank")


@dataclass(frozen=True, eq=False)
class SpectralReport:
    sigma_min: float
    sigma_max: float
    condition_number: float  # inf when sigma_min == 0
    stable_rank: float  # ‖W‖_F² / ‖W‖_2²; 0 for the zero matrix
    full_rank: bool
    singular_values: np.ndarray

    def row(self) -> dict:
        return {
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "condition_number": self.condition_number,
            "stable_rank": self.stable_rank,
            "full_rank": self.full_rank,
        }


def spectral_report(W, rank_tol: float = 1e-6, method: str = "jacobi") -> SpectralReport:
    """Spectrum summary of W; sigma_min is the min(rows, cols)-th singular value."""
    s = svd(W, method=method)[0]
    smax, smin = float(s[0]), float(s[-1])
    kappa = smax / smin if smin > 0 else math.inf
    if smax > 0:
        stable = float(np.sum(s * s) / (smax * smax))
    else:
        stable = 0.0
    full = bool(smin > rank_tol * smax)
    return SpectralReport(smin, smax, kappa, stable, full, s)


def spectra_batch(matrices, seeds=None, rank_tol: float = 1e-6, method: str = "jacobi") -> list[dict]:
    """One row per matrix, each tagged with its seed (default: position)."""
    matrices = list(matrices)
    seeds = range(len(matrices)) if seeds is None else list(seeds)
    rows = []
    for seed, W in zip(seeds, matrices, strict=True):
        rep = spectral_report(W, rank_tol, method)
        rows.append({"seed": seed, "rows": np.shape(W)[0], "cols": np.shape(W)[1], **rep.row()})
    return rows
