"""Areal adjacency graphs and the Laplacian ``D - W`` they induce.

Sites are stored 0-based internally.  Edge lists supplied by users (and the
adjacency CSV format) are 1-based, which is what ``build_graph`` expects by
default.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    DimensionMismatch,
    DisconnectedGraph,
    EigenFailure,
    InvalidEdge,
    IsolatedSite,
)

ZERO_EIG_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    """Undirected, binary, connected neighbourhood structure.

    ``edges`` is an ``(E, 2)`` int array of 0-based pairs with ``i < j``,
    sorted lexicographically.  Build instances with :func:`build_graph`.
    """

    n_sites: int
    edges: np.ndarray
    neighbor_counts: np.ndarray = field(repr=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        w = sp.coo_matrix(
            (data, (np.r_[i, j], np.r_[j, i])), shape=(self.n_sites, self.n_sites)
        )
        return w.tocsr()

    @cached_property
    def laplacian(self) -> np.ndarray:
        """Dense ``D - W``."""
        return np.diag(self.neighbor_counts.astype(float)) - self.adjacency.toarray()

    @cached_property
    def neighbors(self) -> tuple[np.ndarray, ...]:
        w = self.adjacency
        return tuple(w.indices[w.indptr[s]:w.indptr[s + 1]] for s in range(self.n_sites))

    @cached_property
    def color_classes(self) -> tuple[np.ndarray, ...]:
        """Greedy colouring in site order; no two sites in a class are adjacent."""
        colors = np.full(self.n_sites, -1)
        for s in range(self.n_sites):
            taken = {colors[j] for j in self.neighbors[s]}
            c = 0
            while c in taken:
                c += 1
            colors[s] = c
        return tuple(np.flatnonzero(colors == c) for c in range(colors.max() + 1))

    @cached_property
    def color_adjacency(self) -> tuple[sp.csr_matrix, ...]:
        """Rows of ``W`` for each colour class, in class order."""
        return tuple(self.adjacency[sites] for sites in self.color_classes)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["site_a", "site_b"])
            for a, b in self.edges:
                w.writerow([a + 1, b + 1])


def build_graph(n_sites: int, edges, one_based: bool = True) -> AdjacencyGraph:
    """Validate an edge list and return a deduplicated :class:`AdjacencyGraph`.

    Raises InvalidEdge for self-loops or out-of-range endpoints, IsolatedSite
    when a site has no neighbour and DisconnectedGraph when the graph has
    more than one component.
    """
    n_sites = int(n_sites)
    if n_sites < 2:
        raise InvalidEdge(f"need at least 2 sites, got {n_sites}")
    arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if one_based:
        arr = arr - 1
    if np.any(arr < 0) or np.any(arr >= n_sites):
        bad = arr[np.any((arr < 0) | (arr >= n_sites), axis=1)][0] + int(one_based)
        raise InvalidEdge(f"edge {tuple(bad)} has an endpoint outside the site range")
    if np.any(arr[:, 0] == arr[:, 1]):
        bad = arr[arr[:, 0] == arr[:, 1]][0] + int(one_based)
        raise InvalidEdge(f"self-loop at site {bad[0]}")
    arr = np.unique(np.sort(arr, axis=1), axis=0)
    counts = np.bincount(arr.ravel(), minlength=n_sites)
    if np.any(counts == 0):
        lonely = np.flatnonzero(counts == 0) + int(one_based)
        # a lone isolated site is also a disconnection; report the specific cause
        raise IsolatedSite(f"sites without neighbours: {lonely.tolist()}")
    graph = AdjacencyGraph(n_sites, arr, counts)
    n_comp, _ = connected_components(graph.adjacency, directed=False)
    if n_comp > 1:
        raise DisconnectedGraph(f"graph has {n_comp} connected components")
    return graph


def read_adjacency_csv(path, n_sites: int | None = None) -> AdjacencyGraph:
    """Read a ``site_a,site_b`` CSV of 1-based edges."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    edges = [(int(r["site_a"]), int(r["site_b"])) for r in rows]
    if n_sites is None:
        n_sites = max(max(e) for e in edges)
    return build_graph(n_sites, edges)


def read_site_map(path) -> dict[str, int]:
    """Read a ``site_id,index`` CSV into ``{site_id: 0-based index}``."""
    with open(path, newline="") as fh:
        return {r["site_id"]: int(r["index"]) - 1 for r in csv.DictReader(fh)}


def laplacian_quadratic_form(graph: AdjacencyGraph, field, inner_precision) -> float:
    """``vec(Z)' {(D - W) kron P} vec(Z)`` as a sum over edges.

    ``field`` has one length-q row per site; ``inner_precision`` is q x q.
    """
    z = np.asarray(field, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    z = z.reshape(z.shape[0], -1)
    p = np.atleast_2d(np.asarray(inner_precision, dtype=float))
    if z.shape[0] != graph.n_sites or p.shape != (z.shape[1], z.shape[1]):
        raise DimensionMismatch(
            f"field {z.shape} / precision {p.shape} incompatible with {graph.n_sites} sites"
        )
    d = z[graph.edges[:, 0]] - z[graph.edges[:, 1]]
    return float(np.einsum("ei,ij,ej->", d, p, d))


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns

    @property
    def null_mask(self) -> np.ndarray:
        return np.abs(self.eigenvalues) < ZERO_EIG_RTOL * self.eigenvalues.max()

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(~self.null_mask))


def spectral_basis(graph: AdjacencyGraph) -> SpectralBasis:
    """Full symmetric eigendecomposition of ``D - W``, eigenvalues ascending."""
    try:
        lam, vec = scipy.linalg.eigh(graph.laplacian)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    lam = np.where(np.abs(lam) < ZERO_EIG_RTOL * lam.max(), 0.0, lam)
    return SpectralBasis(lam, vec)
