"""Scenario constructors: structured and random graphs, hidden-network thinning, parameter draws.

A :class:`ScenarioConfig` fully determines a population given a master seed.
Everything random is drawn from stream 0 of that seed in a fixed order
(graph, hidden network, parameters, eigensolver start), so the same config and
seed always yield the same population.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import yaml

from .adjustment import spectral_covariates, structural_covariates
from .design import Design, stream
from .graph import DirectedGraph, HiddenNetwork, read_edge_list
from .model import HateParameters

KINDS = ("partial", "marketplace", "graphon", "external")


@dataclass(frozen=True)
class PartialSpec:
    n_m: int = 10
    m: int = 45
    strata: int = 3
    mu: tuple[float, ...] = (0.0, 1.0, 2.0)


@dataclass(frozen=True)
class MarketplaceSpec:
    n_r: int = 20
    n_c: int = 20
    row_strata: int = 2
    col_strata: int = 2
    delta: tuple[float, ...] = (-1.0, 1.0)
    base: float = 1.0


@dataclass(frozen=True)
class GraphonSpec:
    """Step graphon ``G(u, v) = B[b(u), b(v)]`` with blocks of the given proportions."""

    n: int = 500
    rho_star: float = 0.1
    proportions: tuple[float, ...] = (1.0,)
    block_matrix: tuple[tuple[float, ...], ...] = ((1.0,),)
    mu: float = 1.0

    def low_rank(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues ``lambda_k`` and block values of ``psi_k`` with ``int psi_k psi_l = delta_kl``."""
        pi = np.asarray(self.proportions, dtype=np.float64)
        B = np.asarray(self.block_matrix, dtype=np.float64)
        root = np.sqrt(pi)
        lam, vec = np.linalg.eigh(root[:, None] * B * root[None, :])
        order = np.argsort(-np.abs(lam))
        lam, vec = lam[order], vec[:, order]
        keep = np.abs(lam) > 1e-12 * max(np.abs(lam).max(initial=0.0), 1e-300)
        return lam[keep], (vec[:, keep] / root[:, None]).T


@dataclass(frozen=True)
class ExternalSpec:
    path: str = ""
    mu: float = 1.0


@dataclass(frozen=True)
class Scales:
    alpha_sd: float = 1.0
    theta: float = 0.8
    gamma: float = 1.8
    t_scale: float = 0.5
    df: float = 3.0


@dataclass(frozen=True)
class Adjustment:
    """``kind`` is ``spectral`` (uses ``k``; 0 means intercept only), ``strata`` or ``none``."""

    kind: str = "strata"
    k: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "partial"
    keep_prob: float = 0.25
    r1: float = 0.5
    scales: Scales = field(default_factory=Scales)
    adjustment: Adjustment = field(default_factory=Adjustment)
    partial: PartialSpec | None = None
    marketplace: MarketplaceSpec | None = None
    graphon: GraphonSpec | None = None
    external: ExternalSpec | None = None
    cluster_baseline: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if getattr(self, self.kind) is None:
            raise ValueError(f"{self.kind} scenario needs a '{self.kind}' section")
        if not 0.0 <= self.keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in [0, 1]")
        Design(self.r1)
        if self.adjustment.kind not in ("spectral", "strata", "none"):
            raise ValueError(f"unknown adjustment {self.adjustment.kind!r}")
        if self.adjustment.kind == "strata" and self.kind not in ("partial", "marketplace"):
            raise ValueError("strata adjustment needs a partial or marketplace scenario")
        if self.cluster_baseline and self.kind != "partial":
            raise ValueError("the cluster baseline needs a partial-interference scenario")

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items() if v is not None}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            return x

        return clean(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        sections = {
            "scales": Scales,
            "adjustment": Adjustment,
            "partial": PartialSpec,
            "marketplace": MarketplaceSpec,
            "graphon": GraphonSpec,
            "external": ExternalSpec,
        }
        for key, typ in sections.items():
            if data.get(key) is not None:
                sec = dict(data[key])
                unknown = set(sec) - {f.name for f in dataclasses.fields(typ)}
                if unknown:
                    raise ValueError(f"unknown keys in '{key}': {sorted(unknown)}")
                for k, v in sec.items():
                    if isinstance(v, list):
                        sec[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
                data[key] = typ(**sec)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(yaml.safe_load(text) or {})

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_yaml(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_yaml())


def scenario_partial(n_m: int = 10, m: int = 45) -> ScenarioConfig:
    return ScenarioConfig("partial", 0.25, partial=PartialSpec(n_m, m), cluster_baseline=True)


def scenario_marketplace(n_r: int = 20, n_c: int = 20) -> ScenarioConfig:
    return ScenarioConfig("marketplace", 0.05, marketplace=MarketplaceSpec(n_r, n_c))


def scenario_graphon(spec: GraphonSpec, k: int) -> ScenarioConfig:
    adj = Adjustment("none") if k < 0 else Adjustment("spectral", k)
    return ScenarioConfig("graphon", 0.25, adjustment=adj, graphon=spec)


def partial_interference_graph(n_m: int, m: int) -> DirectedGraph:
    """``M`` disjoint complete directed graphs on ``N_M`` units each."""
    if n_m < 1 or m < 1:
        raise ValueError("group size and group count must be positive")
    block = np.ones((n_m, n_m)) - np.eye(n_m)
    return DirectedGraph.from_adjacency(sp.block_diag([block] * m, format="csr"))


def cluster_labels(n_m: int, m: int) -> np.ndarray:
    return np.repeat(np.arange(m), n_m)


def marketplace_graph(n_r: int, n_c: int) -> DirectedGraph:
    """Unit ``i`` is the pair (buyer ``i // N_C``, seller ``i % N_C``); linked units share one of the two."""
    if n_r < 1 or n_c < 1:
        raise ValueError("buyer and seller counts must be positive")
    rows, cols = marketplace_coordinates(n_r, n_c)
    same = (rows[:, None] == rows[None, :]) | (cols[:, None] == cols[None, :])
    np.fill_diagonal(same, False)
    return DirectedGraph.from_adjacency(sp.csr_matrix(same.astype(np.float64)))


def marketplace_coordinates(n_r: int, n_c: int) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(n_r * n_c)
    return i // n_c, i % n_c


class GraphonDraw(NamedTuple):
    graph: DirectedGraph
    u: np.ndarray
    clamped: int


def graphon_graph(n: int, rho_star: float, spec: GraphonSpec, rng: np.random.Generator) -> GraphonDraw:
    """Symmetric graph with ``E_ij ~ Bernoulli(min(1, rho* G(U_i, U_j)))`` and ``U_i ~ U[0, 1]``.

    ``G`` is evaluated through its low-rank form; negative values are clamped
    to zero and counted.
    """
    if not 0.0 <= rho_star <= 1.0:
        raise ValueError("rho_star must lie in [0, 1]")
    lam, psi = spec.low_rank()
    u = rng.random(n)
    edges = np.cumsum(spec.proportions)
    block = np.minimum(np.searchsorted(edges / edges[-1], u, side="right"), len(edges) - 1)
    vals = psi[:, block]
    G = (vals.T * lam) @ vals
    G[np.abs(G) < 1e-12] = 0.0
    clamped = int(np.count_nonzero(np.triu(G < 0, 1)))
    if clamped:
        warnings.warn(f"graphon negative at {clamped} sampled pairs; clamped to 0")
    prob = np.clip(rho_star * G, 0.0, 1.0)
    draw = rng.random((n, n)) < prob
    upper = np.triu(draw, 1)
    adj = upper | upper.T
    return GraphonDraw(DirectedGraph.from_adjacency(sp.csr_matrix(adj.astype(np.float64))), u, clamped)


def thin_to_hidden(g: DirectedGraph, keep_prob: float, rng: np.random.Generator) -> HiddenNetwork:
    """Keep each observed edge independently with probability ``keep_prob``."""
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError("keep_prob must lie in [0, 1]")
    adj = g.adjacency.copy()
    keep = rng.random(adj.nnz) < keep_prob
    adj.data = keep.astype(np.float64)
    adj.eliminate_zeros()
    return HiddenNetwork.from_adjacency(adj, parent=g)


def student_t(loc, scale: float, df: float, size, rng: np.random.Generator) -> np.ndarray:
    """``loc + scale * Z / sqrt(V / df)`` with ``Z`` normal and ``V`` chi-squared(df)."""
    z = rng.standard_normal(size)
    v = rng.chisquare(df, size)
    return loc + scale * z / np.sqrt(v / df)


def draw_parameters(scales: Scales, mu: np.ndarray, h: HiddenNetwork, rng: np.random.Generator) -> HateParameters:
    """Normal intercepts, scaled-t direct effects and scaled-t spillovers divided by the hidden out-degree."""
    mu = np.asarray(mu, dtype=np.float64)
    n = h.n
    if mu.shape != (n,):
        raise ValueError(f"mu must have length {n}")
    alpha = mu + scales.alpha_sd * rng.standard_normal(n)
    theta = scales.theta * student_t(mu, scales.t_scale, scales.df, n, rng)
    adj = h.adjacency
    rows = np.repeat(np.arange(n), h.hidden_out_degrees)
    cols = adj.indices
    raw = scales.gamma * student_t(0.5 * (mu[rows] + mu[cols]), scales.t_scale, scales.df, len(rows), rng)
    gamma = raw / h.hidden_out_degrees[rows]
    return HateParameters(alpha, theta, h, gamma)


@dataclass(frozen=True, eq=False)
class Population:
    config: ScenarioConfig
    graph: DirectedGraph
    params: HateParameters
    W: np.ndarray
    mu: np.ndarray
    clusters: np.ndarray | None = None
    graphon_u: np.ndarray | None = None

    @property
    def design(self) -> Design:
        return Design(self.config.r1)


def _equal_strata(count: int, strata: int, what: str) -> np.ndarray:
    if strata < 1 or count % strata:
        raise ValueError(f"{count} {what} cannot be split into {strata} equal strata")
    return np.arange(count) // (count // strata)


def build_population(cfg: ScenarioConfig, master_seed: int) -> Population:
    rng = stream(master_seed, 0)
    clusters = u = None
    strata_w = None
    if cfg.kind == "partial":
        s = cfg.partial
        if len(s.mu) != s.strata:
            raise ValueError("need one mu value per stratum")
        g = partial_interference_graph(s.n_m, s.m)
        clusters = cluster_labels(s.n_m, s.m)
        stratum = _equal_strata(s.m, s.strata, "clusters")[clusters]
        mu = np.asarray(s.mu, dtype=np.float64)[stratum]
        strata_w = lambda: structural_covariates("merged-groups", stratum)
    elif cfg.kind == "marketplace":
        s = cfg.marketplace
        if len(s.delta) < max(s.row_strata, s.col_strata):
            raise ValueError("need one delta value per stratum")
        g = marketplace_graph(s.n_r, s.n_c)
        r, c = marketplace_coordinates(s.n_r, s.n_c)
        rs = _equal_strata(s.n_r, s.row_strata, "buyers")[r]
        cs = _equal_strata(s.n_c, s.col_strata, "sellers")[c]
        delta = np.asarray(s.delta, dtype=np.float64)
        mu = s.base + delta[rs] + delta[cs]
        strata_w = lambda: structural_covariates("two-way", rs, cs)
    elif cfg.kind == "graphon":
        s = cfg.graphon
        g, u, _ = graphon_graph(s.n, s.rho_star, s, rng)
        mu = np.full(g.n, s.mu)
    else:
        s = cfg.external
        g = read_edge_list(s.path).graph
        mu = np.full(g.n, s.mu)
    hidden = thin_to_hidden(g, cfg.keep_prob, rng)
    params = draw_parameters(cfg.scales, mu, hidden, rng)
    adj = cfg.adjustment
    if adj.kind == "strata":
        W = strata_w()
    elif adj.kind == "spectral":
        W = spectral_covariates(g, adj.k, rng=rng)
    else:
        W = np.empty((g.n, 0))
    return Population(cfg, g, params, W, mu, clusters, u)


def random_hate_instance(
    n: int, rng: np.random.Generator, edge_prob: float = 0.3, keep_prob: float = 0.6
) -> tuple[DirectedGraph, HateParameters]:
    """Small directed Erdos-Renyi graph with a thinned hidden network and Gaussian parameters."""
    adj = rng.random((n, n)) < edge_prob
    np.fill_diagonal(adj, False)
    g = DirectedGraph.from_adjacency(sp.csr_matrix(adj.astype(np.float64)))
    hidden = thin_to_hidden(g, keep_prob, rng)
    alpha = rng.normal(1.0, 1.0, n)
    theta = rng.normal(1.0, 1.0, n)
    gamma = rng.normal(0.5, 1.0, hidden.n_edges)
    return g, HateParameters(alpha, theta, hidden, gamma)
