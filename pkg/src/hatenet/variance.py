"""Conservative variance estimators and Wald intervals.

Every estimator is a weighted sum of squares built from the ego outcome and
the two in-neighbour totals::

    T1_i = sum_j E_ji Y_j Z_j / r1        T0_i = sum_j E_ji Y_j (1 - Z_j) / r0

so a single sparse pass over the transposed adjacency suffices.  Inputs may be
batched along a leading axis like the point estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import ndtri

from .design import Design
from .estimators import _pair
from .graph import DirectedGraph

Estimand = Literal["DIR", "IND", "TOT", "EV_IND", "EV_TOT"]
ESTIMANDS: tuple[str, ...] = ("DIR", "IND", "TOT", "EV_IND", "EV_TOT")


def neighbor_totals(x, z, g: DirectedGraph, d: Design) -> tuple[np.ndarray, np.ndarray]:
    x, z = _pair(x, z, g.n)
    return g.in_sum(x * z / d.r1), g.in_sum(x * (1.0 - z) / d.r0)


def _weighted_squares(ego, t1, t0, z, d: Design):
    r1, r0 = d.r1, d.r0
    n = z.shape[-1]
    a1 = (ego + t1) ** 2
    a0 = (ego + t0) ** 2
    s = a1 * (z / r1 + r1 * (1.0 - z) / r0**2) + a0 * (r0 * z / r1**2 + (1.0 - z) / r0)
    return s.sum(axis=-1) / n**2


def var_dir_hat(y, z, d: Design):
    y, z = _pair(y, z)
    n = y.shape[-1]
    return (z * y**2 / d.r1**2 + (1.0 - z) * y**2 / d.r0**2).sum(axis=-1) / n**2


def var_ind_hat(y, z, g: DirectedGraph, d: Design):
    t1, t0 = neighbor_totals(y, z, g, d)
    return _weighted_squares(0.0, t1, t0, np.asarray(z, dtype=np.float64), d)


def var_tot_hat(y, z, g: DirectedGraph, d: Design):
    y, z = _pair(y, z, g.n)
    t1, t0 = neighbor_totals(y, z, g, d)
    return _weighted_squares(y, t1, t0, z, d)


def var_ev_hat(y, residuals, z, g: DirectedGraph, d: Design, kind: Literal["EV_IND", "EV_TOT"]):
    """Adjusted variance estimate: neighbour totals use residuals.

    For ``EV_TOT`` the ego term inside each square stays the raw outcome.
    """
    y, z = _pair(y, z, g.n)
    t1, t0 = neighbor_totals(residuals, z, g, d)
    if kind == "EV_IND":
        return _weighted_squares(0.0, t1, t0, z, d)
    if kind == "EV_TOT":
        return _weighted_squares(y, t1, t0, z, d)
    raise ValueError(f"kind must be EV_IND or EV_TOT, got {kind!r}")


def normal_quantile(level: float) -> float:
    """Two-sided critical value ``z_{(1 + level) / 2}``."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    return float(ndtri(0.5 * (1.0 + level)))


@dataclass(frozen=True)
class EstimateReport:
    estimand: str
    point: float
    variance_hat: float
    doubled: bool
    level: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "point": self.point,
            "var_hat": self.variance_hat,
            "ci": {"level": self.level, "low": self.ci_low, "high": self.ci_high, "doubled": self.doubled},
        }


def wald_ci(
    point: float,
    variance_hat: float,
    level: float = 0.95,
    doubled: bool = False,
    estimand: str = "DIR",
) -> EstimateReport:
    """``point -/+ z * sqrt(variance_hat)``, with the variance doubled on request."""
    if not variance_hat >= 0.0:
        raise ValueError(f"variance estimate must be non-negative, got {variance_hat}")
    if estimand not in ESTIMANDS:
        raise ValueError(f"unknown estimand {estimand!r}")
    half = normal_quantile(level) * math.sqrt(variance_hat * (2.0 if doubled else 1.0))
    point = float(point)
    return EstimateReport(estimand, point, float(variance_hat), bool(doubled), float(level), point - half, point + half)
