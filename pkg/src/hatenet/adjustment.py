"""Covariates for eigenvector regression adjustment, and within-arm least squares.

Two covariate families are supported:

* spectral: intercept plus the top-``K`` eigenvectors of ``E E^T``, found
  with a matrix-free block Lanczos iteration (full reorthogonalisation);
* structural: intercept plus stratum indicators (merged groups) or buyer and
  seller stratum indicators (two-way layout).

Either way the matrix is whitened so that ``W^T W / n = I``.  Only the column
span matters downstream, so rank-deficient inputs are reduced to a basis
before whitening and the returned matrix may have fewer than ``K + 1``
columns (see :attr:`SpectralBasis.rank`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .graph import DirectedGraph

WHITEN_CUTOFF = 1e-10
LSTSQ_RCOND = 1e-10


class ConvergenceError(RuntimeError):
    """The eigensolver ran out of iterations; ``residuals`` holds the Ritz residual norms."""

    def __init__(self, message: str, residuals: np.ndarray):
        super().__init__(message)
        self.residuals = residuals


class ArmSizeError(ValueError):
    """A treatment arm is empty or too small for the regression."""


class RankDeficiencyWarning(UserWarning):
    pass


class DegenerateSpectrumWarning(UserWarning):
    pass


class SmallStratumWarning(UserWarning):
    pass


def whiten(X: np.ndarray, cutoff: float = WHITEN_CUTOFF) -> np.ndarray:
    """Return a basis of ``span(X)`` with ``W^T W / n = I``.

    Uses the symmetric inverse square root of the Gram matrix when ``X`` has
    full column rank; otherwise directions with relative Gram eigenvalue below
    ``cutoff`` are dropped first.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if X.shape[1] == 0:
        return X.copy()
    W = X
    for _ in range(2):  # second pass mops up rounding from ill-conditioned inputs
        gram = W.T @ W / n
        s, U = np.linalg.eigh(gram)
        if s[-1] <= 0:
            raise ValueError("covariate matrix is identically zero")
        keep = s > cutoff * s[-1]
        if keep.all():
            W = W @ (U * s**-0.5) @ U.T
        else:
            W = W @ (U[:, keep] * s[keep] ** -0.5)
    return W


def whitening_error(W: np.ndarray) -> float:
    n, p = W.shape
    return float(np.max(np.abs(W.T @ W / n - np.eye(p)), initial=0.0))


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    k: int
    eigenvalues: np.ndarray
    next_eigenvalue_bound: float
    eigenvectors: np.ndarray
    W: np.ndarray
    residuals: np.ndarray
    iterations: int
    degenerate: bool = False

    @property
    def rank(self) -> int:
        return self.W.shape[1]


def _orthonormal_block(X, Q, rng, width, scale):
    """Orthonormalise ``X`` against ``Q`` and itself, refilling deflated columns at random."""
    n = X.shape[0]
    room = n - (Q.shape[1] if Q is not None else 0)
    width = min(width, room)
    if width <= 0:
        return np.empty((n, 0))

    def project_out(Y):
        if Q is not None and Q.shape[1]:
            for _ in range(2):
                Y = Y - Q @ (Q.T @ Y)
        return Y

    X = project_out(X)
    kept = np.empty((n, 0))
    if X.shape[1]:
        U, s, _ = np.linalg.svd(X, full_matrices=False)
        thresh = 1e-10 * max(scale, s[0] if s.size else 0.0, 1e-300)
        kept = U[:, s > thresh][:, :width]
    tries = 0
    while kept.shape[1] < width:
        fresh = project_out(rng.standard_normal((n, width - kept.shape[1])))
        if kept.shape[1]:
            for _ in range(2):
                fresh = fresh - kept @ (kept.T @ fresh)
        U, s, _ = np.linalg.svd(fresh, full_matrices=False)
        kept = np.column_stack([kept, U[:, s > 1e-8 * s[0]]])
        tries += 1
        if tries > 10:
            break
    return kept


def top_k_spectrum(
    g: DirectedGraph,
    k: int,
    tol: float = 1e-10,
    max_iter: int = 500,
    rng: np.random.Generator | None = None,
    block_size: int | None = None,
) -> SpectralBasis:
    """Top-``k`` eigenpairs of ``E E^T`` and the whitened covariates ``[1, V_1..V_k]``.

    Block Lanczos with full reorthogonalisation and Rayleigh-Ritz on the whole
    Krylov basis; only products ``v -> E (E^T v)`` are used.  Converged when
    the leading ``k + 1`` Ritz residuals drop below ``tol * lambda_1`` (or the
    basis spans the whole space).  The ``(k+1)``-th Ritz value is returned as
    :attr:`SpectralBasis.next_eigenvalue_bound`.
    """
    n = g.n
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= K < n, got K={k}, n={n}")
    rng = np.random.default_rng(0) if rng is None else rng
    want = k + 1
    width = block_size or min(n, want + 2)

    def apply(X):
        return g.adjacency @ (g.transpose @ X)

    Q = np.empty((n, 0))
    AQ = np.empty((n, 0))
    X = _orthonormal_block(rng.standard_normal((n, width)), None, rng, width, 1.0)
    res = np.full(want, np.inf)
    for it in range(1, max_iter + 1):
        AX = apply(X)
        Q = np.column_stack([Q, X])
        AQ = np.column_stack([AQ, AX])
        H = Q.T @ AQ
        H = 0.5 * (H + H.T)
        theta, S = np.linalg.eigh(H)
        order = np.argsort(theta)[::-1]
        theta, S = theta[order], S[:, order]
        m = min(want, len(theta))
        V = Q @ S[:, :m]
        R = AQ @ S[:, :m] - V * theta[:m]
        res = np.linalg.norm(R, axis=0)
        scale = max(theta[0], 0.0)
        full = Q.shape[1] >= n
        if full or (m == want and np.all(res <= tol * scale)):
            break
        X = _orthonormal_block(AX, Q, rng, width, scale)
        if X.shape[1] == 0:
            break
    else:
        raise ConvergenceError(
            f"block Lanczos did not converge in {max_iter} iterations "
            f"(max relative residual {np.max(res) / max(theta[0], 1e-300):.3e})",
            res,
        )

    lam = np.clip(theta[:k], 0.0, None)
    nxt = float(max(theta[k], 0.0)) if len(theta) > k else 0.0
    vecs = V[:, :k]
    degenerate = bool(lam[0] <= 0.0)
    if degenerate:
        warnings.warn("E E^T is the zero operator; eigenvectors are arbitrary", DegenerateSpectrumWarning)
    W = whiten(np.column_stack([np.ones(n), vecs]))
    return SpectralBasis(k, lam, nxt, vecs, W, res, it, degenerate)


def spectral_covariates(g: DirectedGraph, k: int, **kwargs) -> np.ndarray | None:
    """Covariates for ``k`` eigenvectors; ``k = 0`` is intercept only, ``k = -1`` means no adjustment."""
    if k < -1:
        raise ValueError(f"K must be >= -1, got {k}")
    if k == -1:
        return None
    if k == 0:
        return np.ones((g.n, 1))
    return top_k_spectrum(g, k, **kwargs).W


def _codes(labels, name: str) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if np.issubdtype(labels.dtype, np.integer):
        if labels.size and labels.min() < 0:
            raise ValueError(f"{name} must be non-negative integers")
        counts = np.bincount(labels) if labels.size else np.zeros(0, int)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise ValueError(f"{name}: stratum {int(empty[0])} has no units")
        return labels.astype(np.int64)
    _, codes = np.unique(labels, return_inverse=True)
    return codes


def _dummies(codes: np.ndarray) -> np.ndarray:
    levels = int(codes.max()) + 1
    D = np.zeros((len(codes), levels))
    D[np.arange(len(codes)), codes] = 1.0
    return D[:, 1:]


def structural_covariates(
    kind: Literal["merged-groups", "two-way"],
    labels: Sequence,
    col_labels: Sequence | None = None,
    min_fraction: float = 0.05,
) -> np.ndarray:
    """Whitened intercept plus stratum indicators.

    ``merged-groups`` uses one label per unit; ``two-way`` takes row (buyer)
    labels in ``labels`` and column (seller) labels in ``col_labels`` and adds
    both sets of main-effect dummies without interactions.  Strata smaller than
    ``min_fraction * n`` trigger :class:`SmallStratumWarning` since their
    indicators are not uniformly bounded after whitening.
    """
    codes = [_codes(labels, "labels")]
    if kind == "two-way":
        if col_labels is None:
            raise ValueError("two-way covariates need column labels")
        codes.append(_codes(col_labels, "col_labels"))
        if len(codes[1]) != len(codes[0]):
            raise ValueError("row and column labels differ in length")
    elif kind != "merged-groups":
        raise ValueError(f"unknown covariate kind {kind!r}")
    n = len(codes[0])
    if n == 0:
        raise ValueError("no units")
    for c in codes:
        smallest = np.bincount(c).min()
        if smallest < min_fraction * n:
            warnings.warn(
                f"a stratum holds {smallest} of {n} units; each stratum should be comparable to n",
                SmallStratumWarning,
            )
    X = np.column_stack([np.ones(n)] + [_dummies(c) for c in codes])
    return whiten(X)


@dataclass(frozen=True, eq=False)
class ArmRegression:
    beta1: np.ndarray
    beta0: np.ndarray
    residuals: np.ndarray
    rank_deficient: tuple[bool, bool] = field(default=(False, False))


def within_arm_ols(y, z, W) -> ArmRegression:
    """Separate least-squares fits of ``y`` on ``W`` in the treated and control arms.

    Rank-deficient arms get the minimum-norm solution (singular values below
    ``1e-10`` relative are truncated) together with a
    :class:`RankDeficiencyWarning`.
    """
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    n, p = W.shape
    if y.shape != (n,) or z.shape != (n,):
        raise ValueError("y, z and W must describe the same units")
    resid = y.copy()
    betas = {}
    deficient = {}
    for arm in (1, 0):
        mask = z == arm
        if not mask.any():
            raise ArmSizeError("arm has no units")
        if p == 0:
            betas[arm] = np.zeros(0)
            deficient[arm] = False
            continue
        beta, _, rank, _ = np.linalg.lstsq(W[mask], y[mask], rcond=LSTSQ_RCOND)
        deficient[arm] = rank < p
        if deficient[arm]:
            warnings.warn(
                f"{'treated' if arm else 'control'} arm design has rank {rank} < {p}",
                RankDeficiencyWarning,
            )
        betas[arm] = beta
        resid[mask] = y[mask] - W[mask] @ beta
    return ArmRegression(betas[1], betas[0], resid, (deficient[1], deficient[0]))
