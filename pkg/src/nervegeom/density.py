"""Vertex densities from cell counts, edge interpolation and density-weighted geodesics."""

from __future__ import annotations

import heapq
from concurrent.futures import ThreadPoolExecutor
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .calculus import penalty_matrix
from .complex import Simplex, simplex
from .errors import InputError
from .metric import RiemannianStructure

SCHEMES = ("arithmetic", "harmonic", "lift", "geometric")


@dataclass
class DensityField:
    """Vertex and edge densities.

    Attributes:
        rho_vertex: Density per vertex (after flooring).
        rho_edge: Density per facet edge (empty until interpolated).
        floor: The density floor ``rho_min``.
        clamped: Vertices whose solved density fell below the floor.
        residual: Relative residual of the solved system.
        normalized_residual: Relative residual of the same solution in
            the ``diag(1/vol)`` form of the system.
    """

    rho_vertex: Dict[int, float]
    rho_edge: Dict[Simplex, float] = field(default_factory=dict)
    scheme: Optional[str] = None
    alpha: float = 1.0
    floor: float = 0.0
    clamped: List[int] = field(default_factory=list)
    residual: float = 0.0
    normalized_residual: float = 0.0
    lam: float = 0.0


def density_floor(structure: RiemannianStructure, total: float) -> float:
    return 1e-9 * max(total, 1.0) / structure.partition.domain.volume


def estimate_density(
    structure: RiemannianStructure,
    counts: Optional[Sequence[float]] = None,
    lam: float = 1.0,
    penalties: Sequence[Tuple[int, int, float]] = ((0, 1, 1.0),),
) -> DensityField:
    """Minimize ``sum (n_i - vol_i rho_i)^2 / vol_i + lam * penalty(rho)``.

    The minimizer solves ``(diag(vol) + lam P) rho = n`` where ``P`` is the
    penalty Hessian built from ``penalties`` (triples ``(p, k, weight)``).
    With ``lam = 0`` this gives ``rho_i = n_i / vol_i``.
    """
    if lam < 0:
        raise InputError("lambda must be nonnegative")
    verts = structure.complex.vertices
    if counts is None:
        counts = [len(structure.partition.data_index.get(v, [])) for v in verts]
    n = np.asarray(counts, dtype=float)
    if n.shape != (len(verts),):
        raise InputError("count vector length differs from vertex count")
    vol = np.array([structure.vertex_volume(v) for v in verts])
    if lam == 0.0:
        rho = n / vol
        P = np.zeros((len(verts), len(verts)))
    else:
        P = penalty_matrix(structure, penalties)
        rho = np.linalg.solve(np.diag(vol) + lam * P, n)
    M = np.diag(vol) + lam * P
    denom = max(float(np.linalg.norm(n)), 1e-300)
    residual = float(np.linalg.norm(M @ rho - n)) / denom
    Dinv = np.diag(1.0 / vol)
    norm_res = float(np.linalg.norm((Dinv + lam * P) @ rho - Dinv @ n)) / max(float(np.linalg.norm(Dinv @ n)), 1e-300)
    floor = density_floor(structure, float(n.sum()))
    clamped = [v for v, r in zip(verts, rho) if r < floor]
    rho_v = {v: float(max(r, floor)) for v, r in zip(verts, rho)}
    return DensityField(rho_v, floor=floor, clamped=clamped, residual=residual,
                        normalized_residual=norm_res, lam=lam)


def edge_omega(structure: RiemannianStructure, e: Simplex) -> float:
    """Ratio of the metric edge length to the facet's characteristic scale."""
    e = simplex(*e)
    n = structure.n
    if n < 2:
        raise InputError("edge_omega needs ambient dimension >= 2")
    m = structure.facet_measure(e)
    if m <= 0.0:
        raise InputError(f"edge {e} has no facet; it is excluded from density weighting")
    return structure.edge_length(e) / m ** (1.0 / (n - 1))


def facet_edges(structure: RiemannianStructure) -> List[Simplex]:
    """Edges whose cells share an (n-1)-dimensional facet."""
    return [e for e in structure.complex.simplices(1) if structure.facet_measure(e) > 0.0]


def combine(scheme: str, ri: float, rj: float, omega: float, facet: float = 0.0,
            vol_i: float = 1.0, vol_j: float = 1.0) -> float:
    """Edge density from endpoint densities under one of the four schemes."""
    if scheme == "arithmetic":
        return (ri + rj) / 2.0 * omega
    if scheme == "harmonic":
        return (2.0 * ri * rj / (ri + rj) if ri + rj > 0 else 0.0) * omega
    if scheme == "geometric":
        return math.sqrt(ri * rj) * omega
    if scheme == "lift":
        return facet / (vol_i + vol_j) * (ri + rj)
    raise InputError(f"unsupported density scheme {scheme!r}; choose one of {SCHEMES}")


def interpolate_edge_density(field: DensityField, structure: RiemannianStructure,
                             scheme: str = "arithmetic") -> DensityField:
    """Populate ``rho_edge`` on every facet edge."""
    if scheme not in SCHEMES:
        raise InputError(f"unsupported density scheme {scheme!r}; choose one of {SCHEMES}")
    out: Dict[Simplex, float] = {}
    for e in facet_edges(structure):
        i, j = e
        omega = edge_omega(structure, e) if scheme != "lift" else 1.0
        val = combine(scheme, field.rho_vertex[i], field.rho_vertex[j], omega,
                      structure.facet_measure(e), structure.vertex_volume(i), structure.vertex_volume(j))
        out[e] = max(val, field.floor)
    return DensityField(dict(field.rho_vertex), out, scheme, field.alpha, field.floor, list(field.clamped),
                        field.residual, field.normalized_residual, field.lam)


@dataclass
class WeightedGraph:
    """Undirected graph with positive edge lengths."""

    vertices: List[int]
    lengths: Dict[Simplex, float]
    ambient_dim: Optional[int] = None

    def __post_init__(self):
        self.adjacency: Dict[int, List[Tuple[int, float]]] = {v: [] for v in self.vertices}
        for (a, b), w in sorted(self.lengths.items()):
            if not (w > 0 and math.isfinite(w)):
                raise InputError(f"edge {(a, b)} has non-positive or infinite length {w}")
            self.adjacency[a].append((b, w))
            self.adjacency[b].append((a, w))
        for v in self.adjacency:
            self.adjacency[v].sort()

    def neighbors(self, v: int) -> List[int]:
        return [w for w, _ in self.adjacency[v]]

    def length(self, a: int, b: int) -> float:
        return self.lengths[simplex(a, b)]

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def mean_edge_length(self) -> float:
        return float(np.mean(list(self.lengths.values()))) if self.lengths else 0.0


def density_weighted_graph(field: DensityField, structure: RiemannianStructure, alpha: float = 1.0) -> WeightedGraph:
    """Graph on facet edges with lengths ``l(e) / rho(e)^alpha``."""
    if not 0.0 < alpha <= 1.0:
        raise InputError("alpha must lie in (0, 1]")
    if not field.rho_edge:
        raise InputError("edge densities missing; call interpolate_edge_density first")
    lengths = {}
    for e, r in field.rho_edge.items():
        lengths[e] = structure.edge_length(e) / max(r, field.floor) ** alpha
    return WeightedGraph(structure.complex.vertices, lengths, structure.n)


@dataclass
class Geodesics:
    source: int
    distance: Dict[int, float]
    predecessor: Dict[int, Optional[int]]

    def path(self, target: int) -> List[int]:
        """Vertices of the reported shortest path from the source (empty if unreachable)."""
        if math.isinf(self.distance.get(target, math.inf)):
            return []
        out = [target]
        while out[-1] != self.source:
            out.append(self.predecessor[out[-1]])
        return out[::-1]


def geodesic_distances(graph: WeightedGraph, source: int) -> Geodesics:
    """Single-source shortest paths (Dijkstra).

    Ties between equally short paths go to the smallest predecessor id.
    Unreachable vertices get ``inf``.
    """
    if source not in graph.adjacency:
        raise InputError(f"unknown vertex {source}")
    dist = {v: math.inf for v in graph.vertices}
    pred: Dict[int, Optional[int]] = {v: None for v in graph.vertices}
    dist[source] = 0.0
    done = set()
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for w, length in graph.adjacency[u]:
            if w in done:
                continue
            nd = d + length
            if nd < dist[w]:
                dist[w] = nd
                pred[w] = u
                heapq.heappush(heap, (nd, w))
            elif nd == dist[w] and pred[w] is not None and u < pred[w]:
                pred[w] = u
    return Geodesics(source, dist, pred)


def all_pairs(graph: WeightedGraph, workers: int = 1) -> Dict[int, Geodesics]:
    """Geodesics from every vertex; sources run in a thread pool when ``workers > 1``."""
    if workers <= 1:
        return {v: geodesic_distances(graph, v) for v in graph.vertices}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda v: geodesic_distances(graph, v), graph.vertices))
    return dict(zip(graph.vertices, results))


def distance_matrix(graph: WeightedGraph) -> np.ndarray:
    geo = all_pairs(graph)
    vs = graph.vertices
    return np.array([[geo[a].distance[b] for b in vs] for a in vs])
