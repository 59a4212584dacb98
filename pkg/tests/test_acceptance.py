"""Acceptance gate: one test per criterion, tolerances fixed up front."""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from hatenet.adjustment import structural_covariates, top_k_spectrum, whiten, whitening_error, within_arm_ols
from hatenet.design import Design, draw_assignment, stream
from hatenet.estimators import ev_adjusted_indirect
from hatenet.generators import (
    GraphonSpec,
    graphon_graph,
    marketplace_graph,
    partial_interference_graph,
    random_hate_instance,
    scenario_graphon,
    scenario_marketplace,
    scenario_partial,
)
from hatenet.graph import DirectedGraph, density
from hatenet.model import realize_outcomes, true_estimands
from hatenet.montecarlo import run_replications
from hatenet.oracle import closed_form_variance, enumerate_moments

from conftest import small_instances

EXACT_TOL = 1e-10
SPECTRAL_REL_TOL = 1e-8
WHITEN_TOL = 1e-8
ORTHO_TOL = 1e-8
REPARAM_TOL = 1e-10
CP_BAND = (0.93, 1.00)
SD_RATIO_MAX = 0.5
IND_SD_FACTOR = 2.0
BIAS_SD_MULT = 4.0
R = 2000
UNBIASED_SECONDS = 5.0
SCENARIO1_SECONDS = 120.0
HT = ("DIR", "IND", "TOT")
ALL_FIVE = ("DIR", "IND", "EV_IND", "TOT", "EV_TOT")
SEED = 20261017
SBM = GraphonSpec(
    n=500,
    rho_star=0.2,
    proportions=(0.5, 0.3, 0.2),
    block_matrix=((0.9, 0.1, 0.05), (0.1, 0.6, 0.1), (0.05, 0.1, 0.4)),
)


@pytest.fixture(scope="module")
def enum_instances():
    return small_instances()


def test_criterion_01_exact_unbiasedness(record):
    start = time.perf_counter()
    worst = 0.0
    for g, p, d in small_instances():
        truth = true_estimands(p)
        for name, target in zip(HT, truth):
            worst = max(worst, abs(enumerate_moments(p, g, d, name).mean - target))
    elapsed = time.perf_counter() - start
    ok = worst <= EXACT_TOL and elapsed < UNBIASED_SECONDS
    record(1, ok, f"max |E[tau_hat] - tau| = {worst:.2e} (tol {EXACT_TOL}), {elapsed:.2f}s (< {UNBIASED_SECONDS}s)")
    assert ok


def test_criterion_02_variance_decomposition(enum_instances, record):
    worst = 0.0
    nonzero = True
    for g, p, d in enum_instances:
        nonzero &= p.hidden.n_edges > 0
        for name in HT:
            dec = closed_form_variance(name, p, g, d)
            nonzero &= dec.component2 > 0
            worst = max(worst, abs(enumerate_moments(p, g, d, name).variance - dec.total))
    ok = worst <= EXACT_TOL and nonzero
    record(2, ok, f"max |Var_enum - closed form| = {worst:.2e}, both components nonzero: {nonzero}")
    assert ok


def test_criterion_03_direct_bias_identity(enum_instances, record):
    worst = 0.0
    for g, p, d in enum_instances:
        n = p.n
        gam = p.gamma
        rhs = (math.fsum(p.theta**2) - math.fsum(gam.multiply(gam.T).tocsr().data)) / n**2
        lhs = enumerate_moments(p, g, d, "V_DIR").mean - enumerate_moments(p, g, d, "DIR").variance
        worst = max(worst, abs(lhs - rhs))
    ok = worst <= EXACT_TOL
    record(3, ok, f"max |E[V_DIR] - Var - bias formula| = {worst:.2e}")
    assert ok


def test_criterion_04_conservativeness(enum_instances, record):
    margin = np.inf
    for g, p, d in enum_instances:
        for name in ("IND", "TOT"):
            gap = 2 * enumerate_moments(p, g, d, "V_" + name).mean - enumerate_moments(p, g, d, name).variance
            margin = min(margin, gap)
    ok = margin >= -EXACT_TOL
    record(4, ok, f"min E[2V] - Var over IND/TOT = {margin:.4g} (>= -{EXACT_TOL})")
    assert ok


def _spectral_fixtures():
    fx = [
        ("block(3,2)", partial_interference_graph(3, 2)),
        ("block(5,6)", partial_interference_graph(5, 6)),
        ("market(4,4)", marketplace_graph(4, 4)),
        ("market(5,6)", marketplace_graph(5, 6)),
        ("sbm30", graphon_graph(30, 0.6, SBM, stream(7, 0)).graph),
    ]
    for k in range(6):
        rng = stream(8, k)
        n = int(rng.integers(5, 31))
        adj = (rng.random((n, n)) < rng.uniform(0.05, 0.5)) * (1 - np.eye(n))
        adj[0, 1] = 1
        fx.append((f"er{n}", DirectedGraph.from_adjacency(adj)))
    return fx


def test_criterion_05_spectral(record):
    worst = 0.0
    for _, g in _spectral_fixtures():
        E = g.to_dense()
        ref = np.sort(np.linalg.eigvalsh(E @ E.T))[::-1]
        for k in sorted({1, min(3, g.n - 1), min(7, g.n - 1)}):
            b = top_k_spectrum(g, k, rng=stream(9, k))
            got = np.append(b.eigenvalues, b.next_eigenvalue_bound)
            worst = max(worst, np.max(np.abs(got - ref[: k + 1])) / ref[0])
    block = top_k_spectrum(partial_interference_graph(3, 2), 2)
    market = top_k_spectrum(marketplace_graph(4, 4), 7)
    block_ok = np.allclose(block.eigenvalues, [4, 4], atol=1e-10) and abs(block.next_eigenvalue_bound - 1) <= 1e-10
    market_ok = abs(market.next_eigenvalue_bound - 4) <= 1e-9
    ok = worst <= SPECTRAL_REL_TOL and block_ok and market_ok
    record(
        5,
        ok,
        f"max rel err vs dense = {worst:.2e}; block (3,2) lambda = {np.round(block.eigenvalues, 12).tolist()}, "
        f"lambda_3 = {block.next_eigenvalue_bound:.12g}; market (4,4) lambda_8 = {market.next_eigenvalue_bound:.12g}",
    )
    assert ok


def test_criterion_06_adjustment_algebra(record):
    rng = stream(10, 0)
    whiten_err = ortho_err = reparam_err = 0.0
    cases = []
    g_market = marketplace_graph(10, 10)
    r, c = np.arange(100) // 10, np.arange(100) % 10
    cases.append((g_market, structural_covariates("two-way", r // 5, c // 5)))
    g_sbm = graphon_graph(200, 0.3, SBM, rng).graph
    cases.append((g_sbm, top_k_spectrum(g_sbm, 5, rng=rng).W))
    g_part = partial_interference_graph(10, 12)
    cases.append((g_part, structural_covariates("merged-groups", np.repeat(np.arange(12) // 4, 10))))
    d = Design(0.5)
    for g, W in cases:
        whiten_err = max(whiten_err, whitening_error(W))
        for _ in range(5):
            z = draw_assignment(d, g.n, rng)
            y = rng.normal(size=g.n) * 3 + 1
            fit = within_arm_ols(y, z, W)
            for arm in (0, 1):
                m = z == arm
                ortho_err = max(ortho_err, np.max(np.abs(W[m].T @ fit.residuals[m])) / g.n)
            A = rng.normal(size=(W.shape[1], W.shape[1])) + 3 * np.eye(W.shape[1])
            a, _ = ev_adjusted_indirect(y, z, g, W, d)
            b, _ = ev_adjusted_indirect(y, z, g, W @ A, d)
            reparam_err = max(reparam_err, abs(a - b))
    ok = whiten_err <= WHITEN_TOL and ortho_err <= ORTHO_TOL and reparam_err <= REPARAM_TOL
    record(6, ok, f"whitening {whiten_err:.1e}, residual orthogonality {ortho_err:.1e} (per n), reparam {reparam_err:.1e}")
    assert ok


def test_criterion_07_densities(record):
    part = density(partial_interference_graph(10, 45))
    m20 = density(marketplace_graph(20, 20))
    m60 = density(marketplace_graph(60, 60))
    ok = part == 0.020 and m20 == 0.095 and abs(m60 - 59 / 1800) <= 1e-15
    record(7, ok, f"partial(10,45) = {part!r}, market(20,20) = {m20!r}, market(60,60) = {m60:.6f}")
    assert ok


def _cp_line(res, names):
    return ", ".join(f"{n} {res.summary(n).cp:.3f}" for n in names)


@pytest.mark.slow
def test_criterion_08_scenario1(record):
    start = time.perf_counter()
    res = run_replications(scenario_partial(10, 45), R, SEED + 1)
    elapsed = time.perf_counter() - start
    s = {n: res.summary(n) for n in res.estimators}
    cp_ok = all(CP_BAND[0] <= s[n].cp <= CP_BAND[1] for n in ALL_FIVE)
    r_ind, r_tot = s["EV_IND"].sd / s["IND"].sd, s["EV_TOT"].sd / s["TOT"].sd
    bias_ok = all(abs(s[n].bias) <= BIAS_SD_MULT * s[n].sd / math.sqrt(R) for n in HT)
    ok = cp_ok and r_ind <= SD_RATIO_MAX and r_tot <= SD_RATIO_MAX and bias_ok and elapsed < SCENARIO1_SECONDS
    record(
        8,
        ok,
        f"CP [{_cp_line(res, ALL_FIVE)}]; sd ratios EV/HT IND {r_ind:.3f}, TOT {r_tot:.3f}; "
        f"HT bias within 4sd/sqrt(R): {bias_ok}; {elapsed:.1f}s",
    )
    assert ok


@pytest.mark.slow
def test_criterion_09_scenario2(record):
    res = run_replications(scenario_marketplace(20, 20), R, SEED + 2)
    s = {n: res.summary(n) for n in res.estimators}
    cp_ok = all(CP_BAND[0] <= s[n].cp <= CP_BAND[1] for n in ALL_FIVE)
    r_tot = s["EV_TOT"].sd / s["TOT"].sd
    factor = s["IND"].sd / s["EV_IND"].sd
    ok = cp_ok and r_tot <= SD_RATIO_MAX and factor >= IND_SD_FACTOR
    record(9, ok, f"CP [{_cp_line(res, ALL_FIVE)}]; sd EV_TOT/TOT {r_tot:.3f}; sd IND/EV_IND {factor:.2f}")
    assert ok


@pytest.mark.slow
def test_criterion_10_graphon_sweep(record):
    out = {}
    for k in (0, 1, 5):
        out[k] = run_replications(scenario_graphon(SBM, k), R, SEED + 3)
    checks = []
    parts = []
    for name in ("EV_IND", "EV_TOT"):
        s0, s1, s5 = (out[k].summary(name) for k in (0, 1, 5))
        mc_err = math.hypot(s0.sd, s5.sd) / math.sqrt(R)
        checks.append(s5.sd < s0.sd and abs(s5.bias) >= abs(s0.bias) - 2 * mc_err)
        parts.append(
            f"{name} sd {s0.sd:.3f}/{s1.sd:.3f}/{s5.sd:.3f}, |bias| {abs(s0.bias):.3f}/{abs(s1.bias):.3f}/{abs(s5.bias):.3f}"
        )
    ok = all(checks)
    record(10, ok, "K=0/1/5: " + "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_criterion_11_thread_determinism(tmp_path, record):
    cfg = tmp_path / "s1.yaml"
    scenario_partial(10, 45).save(cfg)
    blobs = []
    for threads in (1, 2, 8):
        out = tmp_path / f"t{threads}.csv"
        subprocess.run(
            [sys.executable, "-m", "hatenet.cli", "simulate", "--config", str(cfg), "--R", "400",
             "--seed", "11", "--threads", str(threads), "--output", str(out)],
            check=True,
        )
        blobs.append(out.read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2]
    record(11, ok, "simulate output byte-identical across 1, 2, 8 threads" if ok else "outputs differ across thread counts")
    assert ok
