"""Spectrum of the normalized multi-layer Laplacian and per-(node,time) features.

The symmetric-normalized Laplacian of the multi-layer graph has its spectrum in
[0, 2]; for a connected graph exactly one eigenvalue is (numerically) zero and
the next one is strictly positive. The k smallest non-trivial eigenpairs give
every (node, time) slot a feature vector: its k eigenvector entries followed by
the k eigenvalues, with a zero projection half for slots that were isolated and
therefore have no row in the graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ConfigError, ConvergenceError, SlateError
from .supra import SupraGraph

DENSE_CUTOFF = 512  # auto method: dense eigensolve up to this many rows


@dataclass(frozen=True)
class NormalizedSupraLaplacian:
    """I - D^{-1/2} A D^{-1/2} with per-row degrees kept for diagnostics."""

    matrix: sp.csr_array
    degree: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class SpectralBasis:
    """k smallest non-trivial eigenpairs, unit-norm and sign-canonical.

    lambda0 is the discarded trivial eigenvalue (None when nothing was
    discarded, as in the raw disconnected variant).
    """

    eigenvalues: np.ndarray  # (k,), ascending
    eigenvectors: np.ndarray  # (size, k), orthonormal columns
    lambda0: float | None

    @property
    def k(self) -> int:
        return len(self.eigenvalues)


def normalized_laplacian(sg: SupraGraph, allow_isolated: bool = False) -> NormalizedSupraLaplacian:
    """Symmetric-normalized Laplacian of the multi-layer adjacency.

    Zero-degree rows are an upstream construction bug for the transformed
    graph; allow_isolated admits them (raw block-diagonal variant) with the
    convention that their diagonal entry is 0, so each isolated row contributes
    one zero eigenvalue, like any other connected component.
    """
    deg = sg.degrees()
    if not allow_isolated and np.any(deg == 0):
        raise SlateError("zero-degree row in a transformed multi-layer graph (construction bug)")
    with np.errstate(divide="ignore"):
        dinv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    a = sg.adjacency.tocoo()
    off = sp.coo_array(
        (-a.data * dinv_sqrt[a.row] * dinv_sqrt[a.col], (a.row, a.col)), shape=a.shape
    )
    diag = sp.dia_array(((deg > 0).astype(np.float64)[None, :], [0]), shape=a.shape)
    lap = (diag + off).tocsr()
    return NormalizedSupraLaplacian(matrix=lap, degree=deg)


def canonicalize_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    Ties resolve to the lowest row index, which argmax already guarantees.
    Idempotent; makes bases independent of eigensolver-internal sign choices.
    """
    out = vectors.copy()
    for j in range(out.shape[1]):
        i = int(np.argmax(np.abs(out[:, j])))
        if out[i, j] < 0:
            out[:, j] = -out[:, j]
    return out


def _dense_eigenpairs(lap: NormalizedSupraLaplacian, count: int) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(lap.matrix.toarray())
    return vals[:count], vecs[:, :count]


def _lanczos_eigenpairs(
    lap: NormalizedSupraLaplacian,
    count: int,
    tol: float,
    seed: int,
    max_iter: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Lanczos with full reorthogonalization and a seeded start vector.

    Keeps the whole Krylov basis (memory O(m*size)), reorthogonalizing each new
    vector twice against it; on breakdown (invariant subspace found) a fresh
    random direction is injected. Convergence is monitored through the
    classical |beta_m * s_{m,i}| residual bound on the lowest Ritz pairs and
    confirmed on the final explicit Ritz vectors.
    """
    A = lap.matrix
    n = lap.size
    m_max = min(max_iter, n)
    rng = np.random.default_rng(seed)

    Q = np.zeros((m_max, n))
    alphas = np.zeros(m_max)
    betas = np.zeros(m_max)  # betas[j] couples q_j and q_{j+1}

    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    Q[0] = q

    def ritz(m):
        T = np.diag(alphas[:m]) + np.diag(betas[: m - 1], 1) + np.diag(betas[: m - 1], -1)
        return np.linalg.eigh(T)

    m = m_max
    for j in range(m_max):
        w = A @ Q[j]
        alphas[j] = Q[j] @ w
        w -= alphas[j] * Q[j]
        if j > 0:
            w -= betas[j - 1] * Q[j - 1]
        for _ in range(2):  # full reorthogonalization, repeated for stability
            w -= Q[: j + 1].T @ (Q[: j + 1] @ w)
        b = np.linalg.norm(w)
        done = j + 1  # Krylov dimension with a complete tridiagonal
        if done >= count and b >= 1e-12 and (done % 10 == 0 or done == m_max):
            # classical bound: residual of Ritz pair i is beta * |last entry|
            _, S = ritz(done)
            if np.all(b * np.abs(S[done - 1, :count]) < 0.1 * tol):
                m = done
                break
        if done == m_max:
            break
        if b < 1e-12:  # invariant subspace found: continue in a fresh direction
            betas[j] = 0.0
            w = rng.standard_normal(n)
            w -= Q[: j + 1].T @ (Q[: j + 1] @ w)
            nrm = np.linalg.norm(w)
            if nrm < 1e-12:
                m = done
                break
            Q[j + 1] = w / nrm
        else:
            betas[j] = b
            Q[j + 1] = w / b
    if m < count:
        raise ConfigError(f"Krylov space ({m}) smaller than requested pair count ({count})")
    vals, S = ritz(m)
    order = np.argsort(vals)[:count]
    theta = vals[order]
    V = Q[:m].T @ S[:, order]
    V /= np.linalg.norm(V, axis=0, keepdims=True)
    residuals = np.linalg.norm(A @ V - V * theta, axis=0)
    if np.any(residuals > max(tol, 1e-8 * n)):
        raise ConvergenceError(
            f"Lanczos did not converge within {m} iterations "
            f"(max residual {residuals.max():.3e}, tol {tol:.1e})",
            residuals=residuals,
        )
    return theta, V


def smallest_eigenpairs(
    lap: NormalizedSupraLaplacian,
    k: int,
    method: str = "auto",
    tol: float = 1e-8,
    seed: int = 0,
) -> SpectralBasis:
    """k smallest non-trivial eigenpairs: computes k+1, discards the trivial one.

    method "dense" is the exact reference path, "lanczos" the iterative one
    (iteration cap 10*k + 50), "auto" picks dense up to DENSE_CUTOFF rows.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    if k + 1 > lap.size:
        raise ConfigError(f"k+1 = {k + 1} exceeds matrix size {lap.size}")
    if tol <= 0:
        raise ConfigError("tol must be positive")
    if method == "auto":
        method = "dense" if lap.size <= DENSE_CUTOFF else "lanczos"
    if method == "dense":
        vals, vecs = _dense_eigenpairs(lap, k + 1)
    elif method == "lanczos":
        vals, vecs = _lanczos_eigenpairs(lap, k + 1, tol, seed, max_iter=10 * k + 50)
    else:
        raise ConfigError(f"unknown eigensolver method {method!r}")
    vecs = vecs / np.linalg.norm(vecs, axis=0, keepdims=True)
    return SpectralBasis(
        eigenvalues=vals[1:].copy(),
        eigenvectors=canonicalize_signs(vecs[:, 1:]),
        lambda0=float(vals[0]),
    )


def smallest_eigenpairs_raw(
    lap: NormalizedSupraLaplacian,
    k: int,
    method: str = "auto",
    tol: float = 1e-8,
    seed: int = 0,
) -> SpectralBasis:
    """k smallest eigenpairs with no trivial-eigenvalue discard.

    For the raw disconnected stacking the zero eigenvalue has one copy per
    connected component, so the k smallest are taken as-is.
    """
    if k < 1 or k > lap.size:
        raise ConfigError(f"need 1 <= k <= {lap.size}")
    if method == "auto":
        method = "dense" if lap.size <= DENSE_CUTOFF else "lanczos"
    if method == "dense":
        vals, vecs = _dense_eigenpairs(lap, k)
    elif method == "lanczos":
        vals, vecs = _lanczos_eigenpairs(lap, k, tol, seed, max_iter=10 * k + 50)
    else:
        raise ConfigError(f"unknown eigensolver method {method!r}")
    vecs = vecs / np.linalg.norm(vecs, axis=0, keepdims=True)
    return SpectralBasis(eigenvalues=vals.copy(), eigenvectors=canonicalize_signs(vecs), lambda0=None)


@dataclass(frozen=True)
class RawEncodingTable:
    """Feature vector for every (node, window position): k eigenvector entries
    (zero when the slot has no row) followed by the k shared eigenvalues."""

    matrix: np.ndarray  # (num_members, num_nodes, 2k)
    k: int

    @property
    def num_members(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[1]

    def vector(self, u: int, tau: int) -> np.ndarray:
        return self.matrix[tau, u]

    def flat(self) -> np.ndarray:
        """(num_members * num_nodes, 2k), window position major, node minor."""
        return self.matrix.reshape(-1, 2 * self.k)


def raw_encoding(basis: SpectralBasis, sg: SupraGraph, n: int) -> RawEncodingTable:
    """Scatter eigenvector rows into the (node, window position) table.

    Slots without a row (isolated at that time) keep a zero projection half;
    virtual rows never contribute. The eigenvalue half is shared by all slots.
    """
    if n != sg.num_nodes:
        raise ConfigError(f"node count {n} disagrees with graph ({sg.num_nodes})")
    k = basis.k
    table = np.zeros((sg.num_members, n, 2 * k))
    table[:, :, k:] = basis.eigenvalues
    for (u, tau), row in sg.index_map.items():
        table[tau, u, :k] = basis.eigenvectors[row]
    return RawEncodingTable(matrix=table, k=k)


def projection_csv_lines(table: RawEncodingTable, window_members) -> list[str]:
    """Rows `node,tau,lambda_index,eigenvalue,projection` for external plotting."""
    lines = ["node,tau,lambda_index,eigenvalue,projection"]
    k = table.k
    for tau_rel in range(table.num_members):
        t = window_members[tau_rel]
        for u in range(table.num_nodes):
            vec = table.matrix[tau_rel, u]
            for i in range(k):
                lines.append(f"{u},{t},{i + 1},{vec[k + i]:.12g},{vec[i]:.12g}")
    return lines
