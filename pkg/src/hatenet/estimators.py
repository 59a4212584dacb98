"""Horvitz-Thompson estimators of the direct, indirect and total effects.

The plain estimators accept a single assignment ``z`` of length ``n`` or a
batch of shape ``(m, n)`` (with matching ``y``) and then return ``m`` values.
The eigenvector-adjusted variants fit a regression and take one assignment.
"""

from __future__ import annotations

import numpy as np

from .adjustment import ArmRegression, ArmSizeError, within_arm_ols
from .design import Design
from .graph import DirectedGraph


def _pair(y, z, n: int | None = None):
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if y.shape != z.shape:
        raise ValueError(f"outcomes {y.shape} and assignment {z.shape} differ in shape")
    if n is not None and y.shape[-1] != n:
        raise ValueError(f"expected {n} units, got {y.shape[-1]}")
    return y, z


def ht_direct(y, z, d: Design):
    """``N^-1 sum_i Y_i (Z_i / r1 - (1 - Z_i) / r0)``."""
    y, z = _pair(y, z)
    return np.mean(y * (z / d.r1 - (1.0 - z) / d.r0), axis=-1)


def spillover_weights(z, g: DirectedGraph, d: Design) -> np.ndarray:
    """``s_i = sum_j E_ij (Z_j - r1) / (r1 r0)``, shared by every indirect-type estimator."""
    return g.out_sum(np.asarray(z, dtype=np.float64) - d.r1) / (d.r1 * d.r0)


def ht_indirect(y, z, g: DirectedGraph, d: Design):
    """``N^-1 sum_i sum_j E_ij Y_i (Z_j / r1 - (1 - Z_j) / r0)``."""
    y, z = _pair(y, z, g.n)
    return np.mean(y * spillover_weights(z, g, d), axis=-1)


def ht_total(y, z, g: DirectedGraph, d: Design):
    return ht_direct(y, z, d) + ht_indirect(y, z, g, d)


def _fit(y, z, W, n):
    y, z = _pair(y, z, n)
    if y.ndim != 1:
        raise ValueError("adjusted estimators take a single assignment")
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != n:
        raise ValueError(f"covariate matrix must have {n} rows, got shape {W.shape}")
    p = W.shape[1]
    treated = int(np.count_nonzero(z == 1.0))
    for size in (treated, n - treated):
        if size == 0:
            raise ArmSizeError("arm has no units")
        if size < p:
            raise ArmSizeError(f"arm has {size} units but the regression has {p} coefficients")
    return within_arm_ols(y, z, W)


def ev_adjusted_indirect(y, z, g: DirectedGraph, W, d: Design) -> tuple[float, ArmRegression]:
    """Indirect estimator applied to within-arm regression residuals on ``W``.

    A ``W`` with zero columns means no adjustment: residuals are ``y`` itself.
    """
    fit = _fit(y, z, W, g.n)
    return float(ht_indirect(fit.residuals, z, g, d)), fit


def ev_adjusted_total(y, z, g: DirectedGraph, W, d: Design) -> tuple[float, ArmRegression]:
    ind, fit = ev_adjusted_indirect(y, z, g, W, d)
    return float(ht_direct(y, z, d)) + ind, fit
