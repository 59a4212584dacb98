"""Exact design-based moments for small populations.

Two independent routes to the same numbers:

* :func:`enumerate_moments` sums a statistic over all ``2**n`` assignments,
  weighted by their Bernoulli probabilities;
* :func:`closed_form_variance` evaluates the two-component variance formulas
  from the conditional means ``E(Y_i | Z_i)`` and ``E(Y_i | Z_i, Z_j)``.

Agreement between them (and with the estimands) is what
:func:`identity_checks` reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from . import estimators as _est
from . import variance as _var
from .design import Design
from .graph import DirectedGraph
from .model import HateParameters, realize_outcomes, true_estimands

DEFAULT_MAX_N = 14
HARD_MAX_N = 20
_CHUNK = 1 << 13

Statistic = Callable[[np.ndarray, np.ndarray], np.ndarray]


class Moments(NamedTuple):
    mean: float
    variance: float


class EnumerationTooLarge(ValueError):
    pass


def gray_code_assignments(n: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Rows ``start..stop`` of the reflected Gray-code listing of ``{0,1}^n``; consecutive rows differ in one unit."""
    stop = 1 << n if stop is None else stop
    k = np.arange(start, stop, dtype=np.int64)
    code = k ^ (k >> 1)
    return ((code[:, None] >> np.arange(n)) & 1).astype(np.float64)


def statistic_by_name(name: str, g: DirectedGraph, d: Design) -> Statistic:
    """Batched callable ``(y, z) -> values`` for a named estimator or variance estimator."""
    table: dict[str, Statistic] = {
        "DIR": lambda y, z: _est.ht_direct(y, z, d),
        "IND": lambda y, z: _est.ht_indirect(y, z, g, d),
        "TOT": lambda y, z: _est.ht_total(y, z, g, d),
        "V_DIR": lambda y, z: _var.var_dir_hat(y, z, d),
        "V_IND": lambda y, z: _var.var_ind_hat(y, z, g, d),
        "V_TOT": lambda y, z: _var.var_tot_hat(y, z, g, d),
    }
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown statistic {name!r}; choose from {sorted(table)}") from None


def enumerate_moments(
    p: HateParameters,
    g: DirectedGraph,
    d: Design,
    statistic: str | Statistic,
    max_n: int = DEFAULT_MAX_N,
    outcomes: Callable[[np.ndarray], np.ndarray] | None = None,
) -> Moments:
    """Exact mean and variance of ``statistic(Y(z), z)`` over the Bernoulli design.

    ``outcomes`` maps a batch of assignments to outcomes and defaults to the
    HATE realisation of ``p``.  Raising ``max_n`` above 14 is allowed up to 20.
    """
    n = p.n
    if max_n > HARD_MAX_N:
        raise EnumerationTooLarge(f"max_n is capped at {HARD_MAX_N}")
    if n > max_n:
        raise EnumerationTooLarge(
            f"n = {n} needs 2**{n} = {1 << n} assignments (about {(1 << n) * max(n, 1) * 8 / 1e6:.0f} MB "
            f"of assignment rows); limit is n <= {max_n}"
        )
    stat = statistic_by_name(statistic, g, d) if isinstance(statistic, str) else statistic
    outcomes = outcomes or (lambda z: realize_outcomes(p, z))
    total = 1 << n
    values = np.empty(total)
    probs = np.empty(total)
    for start in range(0, total, _CHUNK):
        z = gray_code_assignments(n, start, min(start + _CHUNK, total))
        k = z.sum(axis=1)
        probs[start : start + len(z)] = d.r1**k * d.r0 ** (n - k)
        values[start : start + len(z)] = np.broadcast_to(stat(outcomes(z), z), (len(z),))
    total_p = math.fsum(probs)  # 1 up to rounding; dividing keeps constants exact
    mean = math.fsum(probs * values) / total_p
    var = math.fsum(probs * (values - mean) ** 2) / total_p
    return Moments(mean, var)


@dataclass(frozen=True, eq=False)
class ConditionalMeans:
    """``own[z, i] = E(Y_i | Z_i = z)``; pairwise means via :meth:`pair`."""

    own: np.ndarray
    params: HateParameters
    r1: float

    def pair(self, zi: int, zj: int) -> np.ndarray:
        """Dense ``M[i, j] = E(Y_i | Z_i = zi, Z_j = zj)`` for ``i != j`` (diagonal undefined, set to NaN)."""
        p = self.params
        gam = p.gamma.toarray()
        m = (p.alpha + p.theta * zi + self.r1 * p.spillover_totals)[:, None] + gam * zj - self.r1 * gam
        np.fill_diagonal(m, np.nan)
        return m


def conditional_means(p: HateParameters, d: Design) -> ConditionalMeans:
    h = p.spillover_totals
    own = np.vstack([p.alpha + d.r1 * h, p.alpha + p.theta + d.r1 * h])
    return ConditionalMeans(own, p, d.r1)


@dataclass(frozen=True)
class VarianceDecomposition:
    component1: float
    component2: float

    @property
    def total(self) -> float:
        return self.component1 + self.component2


def _edge_arrays(p: HateParameters, g: DirectedGraph):
    if not p.hidden.is_subgraph_of(g):
        raise ValueError("hidden network must be a subgraph of the observed graph")
    coo = g.adjacency.tocoo()
    rows, cols = coo.row.astype(np.int64), coo.col.astype(np.int64)
    gam = np.asarray(p.gamma[rows, cols]).ravel() if len(rows) else np.zeros(0)
    return rows, cols, gam


def _neighbor_column_sums(p: HateParameters, g: DirectedGraph, d: Design) -> np.ndarray:
    """``c_j = sum_i E_ij (r1 r0 Y^{1}_{1} + r0^2 Y^{j=1}_{i=0} + r1^2 Y^{j=0}_{i=1} + r1 r0 Y^{0}_{0})``."""
    r1, r0 = d.r1, d.r0
    rows, cols, gam = _edge_arrays(p, g)
    a, t, h = p.alpha[rows], p.theta[rows], p.spillover_totals[rows]

    def y(zi, zj):
        return a + t * zi + gam * zj + r1 * (h - gam)

    inner = r1 * r0 * y(1, 1) + r0**2 * y(0, 1) + r1**2 * y(1, 0) + r1 * r0 * y(0, 0)
    return np.bincount(cols, weights=inner, minlength=p.n)


def _offdiag_square_sums(M: sp.spmatrix) -> float:
    M = sp.csr_matrix(M)
    M.setdiag(0.0)
    M.eliminate_zeros()
    return math.fsum(M.multiply(M).data) + math.fsum(M.multiply(M.T).tocsr().data)


def _spillover_operator(theta: np.ndarray, p: HateParameters, g: DirectedGraph) -> sp.csr_matrix:
    """``A = diag(theta) E + gamma~^T E``."""
    E = g.adjacency
    return sp.csr_matrix(sp.diags(theta) @ E + p.gamma.T @ E)


def _closed_form(kind: str, ego: HateParameters, nb: HateParameters, g: DirectedGraph, d: Design) -> VarianceDecomposition:
    r1, r0 = d.r1, d.r0
    n = ego.n
    scale1 = n**2 * r1 * r0
    if kind == "DIR":
        cm = conditional_means(ego, d)
        c1 = math.fsum((r0 * cm.own[1] + r1 * cm.own[0]) ** 2) / scale1
        gam = ego.gamma
        c2 = (math.fsum(ego.gamma_values**2) + math.fsum(gam.multiply(gam.T).tocsr().data)) / n**2
        return VarianceDecomposition(c1, c2)
    cols = _neighbor_column_sums(nb, g, d)
    A = _spillover_operator(nb.theta, nb, g)
    if kind == "IND":
        return VarianceDecomposition(math.fsum(cols**2) / scale1, _offdiag_square_sums(A) / n**2)
    if kind == "TOT":
        cm = conditional_means(ego, d)
        c1 = math.fsum((r0 * cm.own[1] + r1 * cm.own[0] + cols) ** 2) / scale1
        B = ego.gamma.T + A
        return VarianceDecomposition(c1, _offdiag_square_sums(B) / n**2)
    raise ValueError(f"kind must be DIR, IND or TOT, got {kind!r}")


def closed_form_variance(kind: str, p: HateParameters, g: DirectedGraph, d: Design) -> VarianceDecomposition:
    """Design variance of the DIR, IND or TOT estimator as two components."""
    return _closed_form(kind, p, p, g, d)


@dataclass(frozen=True, eq=False)
class OracleResiduals:
    """Residuals from the population-level regression with fixed oracle coefficients.

    ``params`` is the HATE instance the residuals follow: intercepts
    ``alpha - W beta0``, direct effects ``theta_perp`` (``theta`` minus its
    projection on ``W``) and unchanged spillovers.
    """

    beta1: np.ndarray
    beta0: np.ndarray
    params: HateParameters
    theta_perp: np.ndarray
    alpha_perp: np.ndarray
    h_perp: np.ndarray
    e_given: np.ndarray
    delta_n: float
    ev_ind: VarianceDecomposition
    ev_tot: VarianceDecomposition

    def pair(self, zi: int, zj: int, d: Design) -> np.ndarray:
        return conditional_means(self.params, d).pair(zi, zj)


def _perp(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x - W @ (W.T @ x / len(x))


def oracle_adjustment(p: HateParameters, g: DirectedGraph, W: np.ndarray, d: Design, tol: float = 1e-8) -> OracleResiduals:
    W = np.asarray(W, dtype=np.float64)
    n = p.n
    if W.ndim != 2 or W.shape[0] != n:
        raise ValueError(f"covariate matrix must have {n} rows")
    err = np.max(np.abs(W.T @ W / n - np.eye(W.shape[1])), initial=0.0)
    if err > tol:
        raise ValueError(f"covariates are not whitened (max deviation {err:.2e})")
    cm = conditional_means(p, d)
    beta1 = W.T @ cm.own[1] / n
    beta0 = W.T @ cm.own[0] / n
    alpha_res = p.alpha - W @ beta0
    theta_res = p.theta - W @ (beta1 - beta0)
    resid = p.replace(alpha=alpha_res, theta=theta_res)
    e_given = conditional_means(resid, d).own
    totals = g.in_sum(e_given)
    delta = max(math.fsum(totals[0] ** 2), math.fsum(totals[1] ** 2)) / n
    return OracleResiduals(
        beta1,
        beta0,
        resid,
        theta_res,
        _perp(W, p.alpha),
        _perp(W, p.spillover_totals),
        e_given,
        delta,
        _closed_form("IND", resid, resid, g, d),
        _closed_form("TOT", p, resid, g, d),
    )


def oracle_ev_statistic(o: OracleResiduals, g: DirectedGraph, d: Design, kind: str) -> Statistic:
    """Adjusted estimator computed with the oracle (not fitted) coefficients."""

    def ind(y, z):
        return _est.ht_indirect(realize_outcomes(o.params, z), z, g, d)

    if kind == "EV_IND":
        return ind
    if kind == "EV_TOT":
        return lambda y, z: _est.ht_direct(y, z, d) + ind(y, z)
    raise ValueError(f"kind must be EV_IND or EV_TOT, got {kind!r}")


class CheckRow(NamedTuple):
    name: str
    lhs: float
    rhs: float
    relation: str
    passed: bool


def _row(name, lhs, rhs, relation, tol) -> CheckRow:
    if relation == "==":
        ok = abs(lhs - rhs) <= tol
    else:
        ok = lhs - rhs >= -tol
    return CheckRow(name, float(lhs), float(rhs), relation, bool(ok))


def identity_checks(
    p: HateParameters,
    g: DirectedGraph,
    d: Design,
    W: np.ndarray | None = None,
    tol: float = 1e-10,
    max_n: int = DEFAULT_MAX_N,
) -> list[CheckRow]:
    """Compare enumeration against estimands, closed forms and conservativeness bounds."""
    n = p.n
    est = true_estimands(p)
    truth = {"DIR": est.tau_dir, "IND": est.tau_ind, "TOT": est.tau_tot}
    rows: list[CheckRow] = []
    moments = {k: enumerate_moments(p, g, d, k, max_n) for k in ("DIR", "IND", "TOT")}
    vhat = {k: enumerate_moments(p, g, d, "V_" + k, max_n).mean for k in ("DIR", "IND", "TOT")}
    for k in ("DIR", "IND", "TOT"):
        rows.append(_row(f"E[tau_hat_{k}] == tau_{k}", moments[k].mean, truth[k], "==", tol))
    for k in ("DIR", "IND", "TOT"):
        rows.append(_row(f"Var[tau_hat_{k}] == closed form", moments[k].variance, closed_form_variance(k, p, g, d).total, "==", tol))
    gam = p.gamma
    bias = (math.fsum(p.theta**2) - math.fsum(gam.multiply(gam.T).tocsr().data)) / n**2
    rows.append(_row("E[V_DIR] - Var[tau_hat_DIR] == bias formula", vhat["DIR"] - moments["DIR"].variance, bias, "==", tol))
    for k in ("DIR", "IND", "TOT"):
        rows.append(_row(f"E[2 V_{k}] >= Var[tau_hat_{k}]", 2 * vhat[k], moments[k].variance, ">=", tol))
    if W is not None:
        o = oracle_adjustment(p, g, W, d)
        diff = o.beta1 - o.beta0
        proj = W.T @ p.theta / n
        rows.append(_row("beta1_ora - beta0_ora == W^T theta / n", float(np.max(np.abs(diff - proj))), 0.0, "==", tol))
        for kind, dec in (("EV_IND", o.ev_ind), ("EV_TOT", o.ev_tot)):
            m = enumerate_moments(p, g, d, oracle_ev_statistic(o, g, d, kind), max_n)
            rows.append(_row(f"Var[oracle {kind}] == closed form", m.variance, dec.total, "==", tol))
        rows.append(_row("Delta_N >= 0", o.delta_n, 0.0, ">=", 0.0))
    return rows
