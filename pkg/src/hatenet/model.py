"""Heterogeneous additive treatment effect (HATE) potential outcomes.

Unit ``i`` responds to an assignment ``z`` as::

    Y_i(z) = alpha_i + theta_i z_i + sum_j gamma~_ij z_j

where ``gamma~`` is supported on the hidden network.  The spillover weights
are stored as a data vector aligned with the hidden network's CSR pattern, so
a weight can never sit on a pair that is not a hidden edge.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .graph import GraphInputError, HiddenNetwork, _freeze


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class HateParameters:
    alpha: np.ndarray
    theta: np.ndarray
    hidden: HiddenNetwork
    gamma_values: np.ndarray

    def __post_init__(self):
        n = self.hidden.n
        object.__setattr__(self, "alpha", _readonly(self.alpha))
        object.__setattr__(self, "theta", _readonly(self.theta))
        object.__setattr__(self, "gamma_values", _readonly(self.gamma_values))
        if self.alpha.shape != (n,) or self.theta.shape != (n,):
            raise ValueError(f"alpha and theta must have length {n}")
        if self.gamma_values.shape != (self.hidden.n_edges,):
            raise ValueError("gamma_values must align with the hidden network's edges")

    @classmethod
    def from_matrix(cls, alpha, theta, gamma) -> "HateParameters":
        """Build parameters from a dense or sparse spillover matrix; its support becomes the hidden network."""
        gamma = sp.csr_matrix(gamma, dtype=np.float64, copy=True)
        gamma.eliminate_zeros()
        gamma.sort_indices()
        pattern = gamma.copy()
        pattern.data[:] = 1.0
        hidden = HiddenNetwork.from_adjacency(pattern)
        return cls(alpha, theta, hidden, gamma.data.copy())

    @property
    def n(self) -> int:
        return self.hidden.n

    @cached_property
    def gamma(self) -> sp.csr_matrix:
        """Spillover matrix ``gamma~`` sharing the hidden network's sparsity pattern."""
        adj = self.hidden.adjacency
        return _freeze(sp.csr_matrix((self.gamma_values.copy(), adj.indices, adj.indptr), shape=adj.shape))

    @cached_property
    def spillover_totals(self) -> np.ndarray:
        """``h_i = sum_j gamma~_ij``."""
        return np.asarray(self.gamma.sum(axis=1)).ravel()

    def replace(self, alpha=None, theta=None) -> "HateParameters":
        return HateParameters(
            self.alpha if alpha is None else alpha,
            self.theta if theta is None else theta,
            self.hidden,
            self.gamma_values,
        )

    def bound_diagnostic(self) -> tuple[float, float, float]:
        """``(max|alpha|, max|theta|, max_ij N~_i |gamma~_ij|)``; reported, never enforced."""
        deg = self.hidden.hidden_out_degrees
        rows = np.repeat(np.arange(self.n), deg)
        scaled = deg[rows] * np.abs(self.gamma_values)
        return (
            float(np.max(np.abs(self.alpha), initial=0.0)),
            float(np.max(np.abs(self.theta), initial=0.0)),
            float(np.max(scaled, initial=0.0)),
        )


class Estimands(NamedTuple):
    tau_dir: float
    tau_ind: float
    tau_tot: float


def realize_outcomes(p: HateParameters, z: np.ndarray) -> np.ndarray:
    """Observed outcomes under assignment ``z``; a 2-D ``z`` gives one row per assignment."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != p.n:
        raise ValueError(f"assignment has length {z.shape[-1]}, expected {p.n}")
    if z.ndim == 1:
        spill = p.gamma @ z
    else:
        spill = (p.gamma @ z.T).T
    return p.alpha + p.theta * z + spill


def true_estimands(p: HateParameters) -> Estimands:
    n = p.n
    tau_dir = math.fsum(p.theta) / n
    tau_ind = math.fsum(p.gamma_values) / n
    return Estimands(tau_dir, tau_ind, tau_dir + tau_ind)


def read_parameters(units_path: str | Path, gamma_path: str | Path) -> HateParameters:
    """Load ``i,alpha,theta`` and sparse ``i,j,gamma`` CSV files."""

    def rows(path):
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    yield lineno, [float(x) for x in row]
                except ValueError:
                    if lineno == 1:
                        continue
                    raise GraphInputError(f"{path}:{lineno}: unparseable row {row!r}") from None

    units = {int(r[0]): (r[1], r[2]) for _, r in rows(units_path)}
    n = len(units)
    if sorted(units) != list(range(n)):
        raise GraphInputError(f"{units_path}: units must cover 0..{n - 1} exactly")
    alpha = np.array([units[i][0] for i in range(n)])
    theta = np.array([units[i][1] for i in range(n)])
    ii, jj, vals = [], [], []
    for lineno, r in rows(gamma_path):
        i, j = int(r[0]), int(r[1])
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise GraphInputError(f"{gamma_path}:{lineno}: invalid pair ({i}, {j})")
        ii.append(i)
        jj.append(j)
        vals.append(r[2])
    gamma = sp.csr_matrix((vals, (ii, jj)), shape=(n, n))
    return HateParameters.from_matrix(alpha, theta, gamma)


def write_parameters(p: HateParameters, units_path: str | Path, gamma_path: str | Path) -> None:
    with open(units_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "alpha", "theta"])
        for i in range(p.n):
            w.writerow([i, repr(float(p.alpha[i])), repr(float(p.theta[i]))])
    coo = p.gamma.tocoo()
    with open(gamma_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "gamma"])
        for i, j, v in zip(coo.row, coo.col, coo.data):
            w.writerow([int(i), int(j), repr(float(v))])
