"""Fixed-population Monte Carlo: repeat the Bernoulli trial, summarise bias, spread and coverage.

Replication ``r`` draws from stream ``r + 1`` of the master seed and writes
into row ``r`` of a preallocated table, so the result does not depend on how
replications are split across threads or in which order they finish.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import estimators as est
from . import variance as var
from .adjustment import ArmSizeError
from .design import Design, draw_assignment, stream
from .generators import Population, ScenarioConfig, build_population
from .model import HateParameters, realize_outcomes, true_estimands

ESTIMATORS = ("DIR", "IND", "EV_IND", "TOT", "EV_TOT")
CLUSTER = "CL_TOT"
CHUNK = 64
MAX_FAILURE_RATE = 0.01
SUMMARY_COLUMNS = ("estimator", "true", "bias", "sd", "rmse", "cp", "length", "R", "failures")


class ReplicationFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class MonteCarloSummary:
    estimator: str
    truth: float
    bias: float
    sd: float
    rmse: float
    cp: float
    mean_ci_length: float
    replications: int
    failures: int = 0

    def row(self) -> list:
        return [
            self.estimator,
            repr(self.truth),
            repr(self.bias),
            repr(self.sd),
            repr(self.rmse),
            repr(self.cp),
            repr(self.mean_ci_length),
            self.replications,
            self.failures,
        ]


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    summaries: tuple[MonteCarloSummary, ...]
    estimators: tuple[str, ...]
    points: np.ndarray
    variances: np.ndarray
    failed: np.ndarray
    population: Population

    def summary(self, name: str) -> MonteCarloSummary:
        return next(s for s in self.summaries if s.estimator == name)


def cluster_estimate(y, z_clusters, clusters, d: Design) -> tuple[float, float]:
    """Difference-in-means over cluster totals and its Neyman-type variance estimate."""
    y = np.asarray(y, dtype=np.float64)
    clusters = np.asarray(clusters)
    zc = np.asarray(z_clusters, dtype=np.float64)
    n = len(y)
    totals = np.bincount(clusters, weights=y, minlength=len(zc))
    point = float(np.sum(totals * (zc / d.r1 - (1.0 - zc) / d.r0)) / n)
    vhat = float(np.sum(totals**2 * (zc / d.r1**2 + (1.0 - zc) / d.r0**2)) / n**2)
    return point, vhat


def cluster_randomization_baseline(p: HateParameters, clusters, d: Design, rng: np.random.Generator) -> tuple[float, float]:
    """Treat whole clusters with probability ``r1`` and return ``(estimate, variance estimate)``."""
    clusters = np.asarray(clusters)
    zc = (rng.random(int(clusters.max()) + 1) < d.r1).astype(np.float64)
    y = realize_outcomes(p, zc[clusters])
    return cluster_estimate(y, zc, clusters, d)


def _one(pop: Population, seed: int, r: int, with_cluster: bool):
    p, g, d, W = pop.params, pop.graph, pop.design, pop.W
    rng = stream(seed, r + 1)
    z = draw_assignment(d, p.n, rng)
    y = realize_outcomes(p, z)
    dir_, ind = float(est.ht_direct(y, z, d)), float(est.ht_indirect(y, z, g, d))
    ev_ind, fit = est.ev_adjusted_indirect(y, z, g, W, d)
    points = [dir_, ind, ev_ind, dir_ + ind, dir_ + ev_ind]
    vars_ = [
        float(var.var_dir_hat(y, z, d)),
        float(var.var_ind_hat(y, z, g, d)),
        float(var.var_ev_hat(y, fit.residuals, z, g, d, "EV_IND")),
        float(var.var_tot_hat(y, z, g, d)),
        float(var.var_ev_hat(y, fit.residuals, z, g, d, "EV_TOT")),
    ]
    if with_cluster:
        pt, vh = cluster_randomization_baseline(p, pop.clusters, d, rng)
        points.append(pt)
        vars_.append(vh)
    return points, vars_


def summarize(
    name: str, truth: float, points: np.ndarray, variances: np.ndarray, failures: int, level: float = 0.95
) -> MonteCarloSummary:
    """Bias, sample sd (``R - 1`` denominator), RMSE about the truth, Wald coverage and mean length."""
    R = len(points)
    half = var.normal_quantile(level) * np.sqrt(variances)
    err = points - truth
    return MonteCarloSummary(
        name,
        float(truth),
        float(np.mean(err)),
        float(np.std(points, ddof=1)),
        float(math.sqrt(np.mean(err**2))),
        float(np.mean(np.abs(err) <= half)),
        float(np.mean(2.0 * half)),
        R,
        failures,
    )


def run_replications(
    cfg: ScenarioConfig | Population,
    R: int,
    master_seed: int,
    threads: int = 1,
    level: float = 0.95,
) -> MonteCarloResult:
    """Build the population from stream 0 (or reuse a given one) and run ``R`` replications."""
    if R < 2:
        raise ValueError("need at least two replications")
    pop = cfg if isinstance(cfg, Population) else build_population(cfg, master_seed)
    with_cluster = pop.config.cluster_baseline
    names = ESTIMATORS + ((CLUSTER,) if with_cluster else ())
    points = np.full((R, len(names)), np.nan)
    variances = np.full((R, len(names)), np.nan)
    failed = np.zeros(R, dtype=bool)

    def work(start: int) -> None:
        for r in range(start, min(start + CHUNK, R)):
            try:
                pts, vs = _one(pop, master_seed, r, with_cluster)
            except (ArmSizeError, np.linalg.LinAlgError):
                failed[r] = True
                continue
            points[r] = pts
            variances[r] = vs

    starts = range(0, R, CHUNK)
    if threads <= 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))

    n_failed = int(failed.sum())
    if n_failed > MAX_FAILURE_RATE * R:
        raise ReplicationFailure(f"{n_failed} of {R} replications failed")
    truth = true_estimands(pop.params)
    truths = {"DIR": truth.tau_dir, "IND": truth.tau_ind, "EV_IND": truth.tau_ind}
    truths.update({"TOT": truth.tau_tot, "EV_TOT": truth.tau_tot, CLUSTER: truth.tau_tot})
    ok = ~failed
    summaries = tuple(
        summarize(nm, truths[nm], points[ok, k], variances[ok, k], n_failed, level) for k, nm in enumerate(names)
    )
    return MonteCarloResult(summaries, names, points, variances, failed, pop)


def write_summary_csv(summaries: Sequence[MonteCarloSummary], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            w.writerow(s.row())


def read_summary_csv(path: str | Path) -> list[MonteCarloSummary]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [
            MonteCarloSummary(
                row["estimator"],
                float(row["true"]),
                float(row["bias"]),
                float(row["sd"]),
                float(row["rmse"]),
                float(row["cp"]),
                float(row["length"]),
                int(row["R"]),
                int(row["failures"]),
            )
            for row in reader
        ]


def write_replications_csv(result: MonteCarloResult, path: str | Path) -> None:
    """Long-format per-replication table: ``rep,estimator,point,var_hat``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rep", "estimator", "point", "var_hat", "failed"])
        for r in range(len(result.failed)):
            for k, nm in enumerate(result.estimators):
                w.writerow([r, nm, repr(float(result.points[r, k])), repr(float(result.variances[r, k])), int(result.failed[r])])
