"""Sparse directed interference networks.

The observed network ``E`` and the hidden network ``E~`` (the subgraph that
actually carries interference) are both stored as read-only CSR matrices with
unit weights.  Row ``i`` lists the out-neighbours ``j`` with ``E[i, j] = 1``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class GraphInputError(ValueError):
    """Raised for malformed edge lists (self-loops, out-of-range indices, bad rows)."""


def _freeze(mat: sp.csr_matrix) -> sp.csr_matrix:
    for arr in (mat.data, mat.indices, mat.indptr):
        arr.flags.writeable = False
    return mat


def _binary_csr(rows: np.ndarray, cols: np.ndarray, n: int) -> sp.csr_matrix:
    data = np.ones(len(rows), dtype=np.float64)
    mat = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    mat.sum_duplicates()
    mat.data[:] = 1.0
    mat.sort_indices()
    return mat


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    """Observed binary directed graph without self-loops.

    Use :func:`from_edge_list` or :meth:`from_adjacency` rather than the
    constructor; they validate the invariants.
    """

    adjacency: sp.csr_matrix

    @classmethod
    def from_adjacency(cls, adjacency) -> "DirectedGraph":
        mat = sp.csr_matrix(adjacency, dtype=np.float64, copy=True)
        n, m = mat.shape
        if n != m:
            raise GraphInputError(f"adjacency must be square, got {mat.shape}")
        mat.eliminate_zeros()
        if np.any(mat.diagonal() != 0):
            i = int(np.flatnonzero(mat.diagonal())[0])
            raise GraphInputError(f"self-loop at unit {i}")
        if np.any(mat.data != 1.0):
            raise GraphInputError("adjacency entries must be 0 or 1")
        mat.sort_indices()
        return cls(_freeze(mat))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz)

    @cached_property
    def transpose(self) -> sp.csr_matrix:
        """Row-major transpose; row ``i`` lists the in-neighbours of ``i``."""
        return _freeze(self.adjacency.T.tocsr())

    @cached_property
    def out_degrees(self) -> np.ndarray:
        deg = np.diff(self.adjacency.indptr).astype(np.int64)
        deg.flags.writeable = False
        return deg

    @cached_property
    def in_degrees(self) -> np.ndarray:
        deg = np.bincount(self.adjacency.indices, minlength=self.n).astype(np.int64)
        deg.flags.writeable = False
        return deg

    def out_sum(self, x: np.ndarray) -> np.ndarray:
        """``sum_j E[i, j] x[..., j]`` for every ``i``; ``x`` may be batched."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.adjacency @ x
        return (self.adjacency @ x.T).T

    def in_sum(self, x: np.ndarray) -> np.ndarray:
        """``sum_j E[j, i] x[..., j]`` for every ``i``; ``x`` may be batched."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.transpose @ x
        return (self.transpose @ x.T).T

    def edges(self) -> np.ndarray:
        coo = self.adjacency.tocoo()
        return np.column_stack([coo.row, coo.col]).astype(np.int64)

    def to_dense(self) -> np.ndarray:
        return self.adjacency.toarray()

    def is_symmetric(self) -> bool:
        return (self.adjacency != self.transpose).nnz == 0


@dataclass(frozen=True, eq=False)
class HiddenNetwork:
    """Latent subgraph ``E~`` of an observed graph that drives interference."""

    adjacency: sp.csr_matrix

    @classmethod
    def from_adjacency(cls, adjacency, parent: DirectedGraph | None = None) -> "HiddenNetwork":
        g = DirectedGraph.from_adjacency(adjacency)
        h = cls(g.adjacency)
        if parent is not None and not h.is_subgraph_of(parent):
            raise GraphInputError("hidden network has an edge absent from the observed graph")
        return h

    @classmethod
    def from_graph(cls, g: DirectedGraph) -> "HiddenNetwork":
        return cls(g.adjacency)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz)

    @cached_property
    def hidden_out_degrees(self) -> np.ndarray:
        deg = np.diff(self.adjacency.indptr).astype(np.int64)
        deg.flags.writeable = False
        return deg

    def is_subgraph_of(self, g: DirectedGraph) -> bool:
        if g.n != self.n:
            return False
        return (self.adjacency - self.adjacency.multiply(g.adjacency)).count_nonzero() == 0


@dataclass(frozen=True, eq=False)
class NormalizedLatent:
    """Row-normalised hidden adjacency ``Q``; rows of isolated units are zero."""

    rows: sp.csr_matrix


class EdgeListLoad(NamedTuple):
    graph: DirectedGraph
    edges_read: int
    duplicates: int


class NormEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def _validate_edges(edges: np.ndarray, n: int, lines: Sequence[int] | None = None) -> None:
    if n < 0:
        raise GraphInputError(f"unit count must be non-negative, got {n}")
    if edges.size == 0:
        return
    where = (lambda k: f" (line {lines[k]})") if lines is not None else (lambda k: "")
    bad = np.flatnonzero((edges < 0).any(axis=1) | (edges >= n).any(axis=1))
    if bad.size:
        k = int(bad[0])
        raise GraphInputError(f"edge {tuple(edges[k])} has an index outside 0..{n - 1}{where(k)}")
    loops = np.flatnonzero(edges[:, 0] == edges[:, 1])
    if loops.size:
        k = int(loops[0])
        raise GraphInputError(f"self-loop at unit {edges[k, 0]}{where(k)}")


def _from_edges(edges: np.ndarray, n: int, lines=None) -> tuple[DirectedGraph, int]:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    _validate_edges(edges, n, lines)
    mat = _binary_csr(edges[:, 0], edges[:, 1], n)
    duplicates = len(edges) - mat.nnz
    return DirectedGraph(_freeze(mat)), duplicates


def from_edge_list(edges: Iterable[tuple[int, int]], n: int) -> DirectedGraph:
    """Build a graph on ``n`` units from ``(source, target)`` pairs.

    Duplicate pairs are collapsed. Self-loops and indices outside ``0..n-1``
    raise :class:`GraphInputError`.
    """
    graph, duplicates = _from_edges(np.array(list(edges), dtype=np.int64), n)
    if duplicates:
        logger.info("collapsed %d duplicate edges", duplicates)
    return graph


def read_edge_list(path: str | Path, n: int | None = None) -> EdgeListLoad:
    """Read a ``source,target`` CSV edge list.

    Lines starting with ``#`` are skipped and a header row is detected when
    its first field is not an integer.  Without ``n`` the unit count is
    ``max index + 1``.
    """
    pairs: list[tuple[int, int]] = []
    lines: list[int] = []
    with open(path, newline="") as fh:
        first = True
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if first:
                first = False
                try:
                    int(row[0])
                except ValueError:
                    continue
            if len(row) < 2:
                raise GraphInputError(f"line {lineno}: expected 'source,target', got {row!r}")
            try:
                pairs.append((int(row[0]), int(row[1])))
            except ValueError as exc:
                raise GraphInputError(f"line {lineno}: {exc}") from None
            lines.append(lineno)
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    if n is None:
        n = int(edges.max()) + 1 if edges.size else 0
    graph, duplicates = _from_edges(edges, n, lines)
    return EdgeListLoad(graph, len(pairs), duplicates)


def write_edge_list(g: DirectedGraph, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source", "target"])
        writer.writerows(g.edges().tolist())


def density(g: DirectedGraph) -> float:
    """Average out-degree divided by ``n``: ``sum_i N_i / n**2``."""
    if g.n < 1:
        raise ValueError("density needs at least one unit")
    return g.n_edges / g.n**2


def normalized_latent(h: HiddenNetwork) -> NormalizedLatent:
    deg = h.hidden_out_degrees.astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return NormalizedLatent(_freeze(sp.csr_matrix(sp.diags(inv) @ h.adjacency)))


def operator_norm_estimate(
    g: DirectedGraph,
    tol: float = 1e-10,
    max_iter: int = 1000,
    rng: np.random.Generator | None = None,
) -> NormEstimate:
    """Largest singular value of ``E`` by power iteration on ``E E^T``."""
    if g.n_edges == 0:
        return NormEstimate(0.0, True, 0)
    rng = np.random.default_rng(0) if rng is None else rng
    v = rng.standard_normal(g.n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = g.adjacency @ (g.transpose @ v)
        new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return NormEstimate(0.0, True, it)
        v = w / norm
        if abs(new - lam) <= tol * max(abs(new), 1e-300):
            return NormEstimate(float(np.sqrt(new)), True, it)
        lam = new
    logger.warning("power iteration stopped after %d iterations without converging", max_iter)
    return NormEstimate(float(np.sqrt(lam)), False, max_iter)
