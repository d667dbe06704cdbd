"""Dense linear algebra and seeded random streams shared by the other modules.

Matrices are plain ``numpy`` float64 arrays. The SVD is a one-sided Jacobi
method with round-robin pair ordering, so each round rotates c/2 disjoint
column pairs in one vectorised step. ``method="lapack"`` is available for
large matrices where the Jacobi sweeps get slow (~20 s at 500x784).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

ATOL = 1e-12
RTOL = 1e-8


def close(a, b, atol: float = ATOL, rtol: float = RTOL) -> bool:
    """Hybrid test ``|a-b| <= atol + rtol*max(|a|,|b|)``, elementwise and all()."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return bool(np.all(np.abs(a - b) <= atol + rtol * np.maximum(np.abs(a), np.abs(b))))


@dataclass(frozen=True)
class Rng:
    """Seed plus a stream path.

    Every call to :meth:`generator` restarts the same Philox stream, so an
    ``Rng`` value fully determines what it produces. Independent streams are
    obtained with :meth:`spawn`, which appends to the path; distinct paths map
    to distinct ``SeedSequence`` spawn keys.
    """

    seed: int
    path: tuple[int, ...] = ()

    def spawn(self, *ids: int) -> "Rng":
        return Rng(self.seed, self.path + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def as_rng(rng: "Rng | int") -> Rng:
    return rng if isinstance(rng, Rng) else Rng(int(rng))


def gaussian_vector(n: int, rng: Rng) -> np.ndarray:
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    return rng.generator().standard_normal(n)


def _check_finite(A: np.ndarray, name: str = "matrix") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


def _jacobi_tall(A: np.ndarray, tol: float, max_sweeps: int):
    m, n = A.shape
    c_ = n + n % 2
    h = c_ // 2
    # Round-robin (circle method) ordering. Rows are kept laid out so that
    # row i pairs with row h+i; both halves are then contiguous views.
    players = list(range(c_))

    def layout(pl):
        return np.array(pl[:h] + pl[h:][::-1])

    cur = layout(players)
    G = np.zeros((c_, m))
    G[:n] = A.T
    G = G[cur]
    V = np.eye(c_)[cur]
    for _ in range(max_sweeps):
        rotated = 0
        for _round in range(c_ - 1):
            Gp, Gq = G[:h], G[h:]
            alpha = np.einsum("ij,ij->i", Gp, Gp)
            beta = np.einsum("ij,ij->i", Gq, Gq)
            gamma = np.einsum("ij,ij->i", Gp, Gq)
            act = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if act.any():
                rotated += int(act.sum())
                zeta = (beta - alpha) / (2.0 * np.where(act, gamma, 1.0))
                t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                t[zeta == 0] = 1.0
                t[~act] = 0.0
                c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
                s = c * t[:, None]
                for M in (G, V):
                    Mp, Mq = M[:h], M[h:]
                    tmp = Mp.copy()
                    Mp *= c
                    Mp -= s * Mq
                    Mq *= c
                    Mq += s * tmp
            players = [players[0], players[-1]] + players[1:-1]
            new = layout(players)
            pos = np.empty(c_, dtype=int)
            pos[cur] = np.arange(c_)
            G = G[pos[new]]
            V = V[pos[new]]
            cur = new
        if rotated == 0:
            break
    inv = np.empty(c_, dtype=int)
    inv[cur] = np.arange(c_)
    G = G[inv][:n].T
    V = V[inv][:n, :n].T
    sigma = np.sqrt(np.einsum("ij,ij->j", G, G))
    order = np.argsort(-sigma, kind="stable")
    sigma, G, V = sigma[order], G[:, order], V[:, order]
    U = np.zeros_like(G)
    scale = sigma[0] if sigma.size and sigma[0] > 0 else 1.0
    live = sigma > 1e-300 + 1e-15 * scale
    U[:, live] = G[:, live] / sigma[live]
    if not live.all():
        U = _complete_orthonormal(U, live)
    return sigma, U, V


def _complete_orthonormal(U: np.ndarray, live: np.ndarray) -> np.ndarray:
    m = U.shape[0]
    basis = [U[:, j] for j in np.flatnonzero(live)]
    out = U.copy()
    for j in np.flatnonzero(~live):
        best = None
        for e in range(m):
            cand = np.zeros(m)
            cand[e] = 1.0
            for b in basis:
                cand -= (b @ cand) * b
            nrm = np.linalg.norm(cand)
            if best is None or nrm > best[0]:
                best = (nrm, cand)
            if nrm > 0.5:
                break
        vec = best[1] / best[0]
        basis.append(vec)
        out[:, j] = vec
    return out


def svd(A, method: str = "jacobi", tol: float = 1e-15, max_sweeps: int = 60):
    """Thin SVD ``A = U diag(s) V^T`` with ``s`` sorted descending.

    Returns ``(s, U, V)`` where ``U`` is rows x r and ``V`` is cols x r,
    ``r = min(rows, cols)``.
    """
    A = _check_finite(A)
    if A.ndim != 2 or min(A.shape) < 1:
        raise InvalidInputError(f"svd needs a non-empty 2-D matrix, got shape {A.shape}")
    if method == "lapack":
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        return s, U, Vt.T
    if method != "jacobi":
        raise InvalidInputError(f"unknown svd method {method!r}")
    if A.shape[0] >= A.shape[1]:
        return _jacobi_tall(A, tol, max_sweeps)
    s, V, U = _jacobi_tall(A.T, tol, max_sweeps)
    return s, U, V


def singular_values(A, method: str = "jacobi") -> np.ndarray:
    return svd(A, method=method)[0]


def sym_eig(H, rtol: float = 1e-8) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, descending."""
    H = _check_finite(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InvalidInputError(f"sym_eig needs a square matrix, got shape {H.shape}")
    scale = np.max(np.abs(H)) if H.size else 0.0
    if np.max(np.abs(H - H.T), initial=0.0) > rtol * max(scale, 1e-300):
        raise InvalidInputError("matrix is not symmetric within tolerance")
    return np.linalg.eigvalsh(0.5 * (H + H.T))[::-1]
