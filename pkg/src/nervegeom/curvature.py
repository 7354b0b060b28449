"""Vertex curvature measures on the density-weighted nerve.

Geometric measures (ball, dist, spray, tri, path) use geodesics of a
:class:`~nervegeom.density.WeightedGraph`; functional measures (mean,
angle, level) use a vertex function together with the metric Gram.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional

import numpy as np

from .complex import simplex
from .density import DensityField, Geodesics, WeightedGraph, geodesic_distances
from .errors import InputError
from .metric import RiemannianStructure
from .partition import Partition

EPS_DENOM = 1e-12
EPS_COS = 1e-12


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def sphere(geo: Geodesics, r: float, band: Optional[float] = None) -> List[int]:
    """Vertices other than the source at geodesic distance ``r``.

    ``band`` is the accepted absolute deviation from ``r``; by default a
    relative tolerance of 1e-9.
    """
    band = 1e-9 * max(1.0, abs(r)) if band is None else band
    return sorted(w for w, d in geo.distance.items() if w != geo.source and abs(d - r) <= band)


def ball_curvature(graph: WeightedGraph, field: DensityField, v: int, r: float,
                   geo: Optional[Geodesics] = None, n: Optional[int] = None) -> float:
    """Relative excess of the geodesic ball count over the flat reference."""
    if r <= 0:
        raise InputError("radius must be positive")
    n = graph.ambient_dim if n is None else n
    if n is None:
        raise InputError("ambient dimension unknown")
    geo = geo or geodesic_distances(graph, v)
    count = sum(1 for d in geo.distance.values() if d <= r)
    flat = field.rho_vertex[v] * unit_ball_volume(n) * r**n
    if flat <= 0:
        raise InputError("flat reference count is zero")
    return (count - flat) / flat


def dist_curvature(graph: WeightedGraph, v: int, dbar: Optional[float] = None,
                   geo: Optional[Geodesics] = None) -> float:
    """``1 - sum_w d(v,w) / (deg(v) * dbar)`` over neighbours ``w``."""
    nbrs = graph.neighbors(v)
    if not nbrs:
        raise InputError(f"vertex {v} is isolated")
    dbar = graph.mean_edge_length() if dbar is None else dbar
    geo = geo or geodesic_distances(graph, v)
    return 1.0 - sum(geo.distance[w] for w in nbrs) / (len(nbrs) * dbar)


@dataclass
class SprayResult:
    theta_angle: float
    theta_spread: float
    kappa: float
    size: int


def _unit_cos(structure: RiemannianStructure, v: int, e1, e2) -> float:
    g11 = structure.edge_inner(v, e1, e1)
    g22 = structure.edge_inner(v, e2, e2)
    if g11 <= 0 or g22 <= 0:
        return 0.0
    return float(np.clip(structure.edge_inner(v, e1, e2) / math.sqrt(g11 * g22), -1.0, 1.0))


def spray_curvature(graph: WeightedGraph, structure: RiemannianStructure, v: int, r: float,
                    geos: Optional[Mapping[int, Geodesics]] = None,
                    band: Optional[float] = None) -> Optional[SprayResult]:
    """Angular and distance spreading of geodesics reaching the sphere of radius r.

    Both double sums run over all ordered pairs including the diagonal.
    Returns ``None`` when the sphere is empty.
    """
    geo_v = geos[v] if geos is not None else geodesic_distances(graph, v)
    S = sphere(geo_v, r, band)
    if not S:
        return None
    first = {w: simplex(v, geo_v.path(w)[1]) for w in S}
    angles = []
    spread = 0.0
    for w in S:
        geo_w = geos[w] if geos is not None else geodesic_distances(graph, w)
        for w2 in S:
            angles.append(math.acos(_unit_cos(structure, v, first[w], first[w2])))
            spread += geo_w.distance[w2]
    theta_spread = spread / (len(S) ** 2 * 2.0 * r)
    return SprayResult(float(np.mean(angles)), theta_spread, 1.0 - theta_spread, len(S))


def tri_curvature(graph: WeightedGraph, v: int, geos: Optional[Mapping[int, Geodesics]] = None) -> float:
    """Mean over all ordered neighbour pairs of ``1 - d(w,w') / (d(v,w) + d(v,w'))``."""
    nbrs = graph.neighbors(v)
    if not nbrs:
        raise InputError(f"vertex {v} is isolated")
    geo_v = geos[v] if geos is not None else geodesic_distances(graph, v)
    total = 0.0
    for w in nbrs:
        geo_w = geos[w] if geos is not None else geodesic_distances(graph, w)
        for w2 in nbrs:
            if w == w2:
                total += 1.0
                continue
            den = geo_v.distance[w] + geo_v.distance[w2]
            total += 1.0 - geo_w.distance[w2] / den if den > 0 else 0.0
    return total / len(nbrs) ** 2


def mean_cell_diameter(partition: Partition) -> float:
    return float(np.mean([partition.cell_diameter(c) for c in partition.ids]))


def path_curvature(graph: WeightedGraph, v: int, r: float, lbar: float,
                   geo: Optional[Geodesics] = None, band: Optional[float] = None) -> Optional[float]:
    """``J_r(v) * lbar - 1`` with ``J_r`` the mean number of cells per unit path length.

    Cells on a path are the vertices of the reported shortest path,
    endpoints included. Returns ``None`` for an empty sphere.
    """
    geo = geo or geodesic_distances(graph, v)
    S = sphere(geo, r, band)
    if not S:
        return None
    J = float(np.mean([len(geo.path(w)) / r for w in S]))
    return J * lbar - 1.0


def _values(f, structure: RiemannianStructure) -> Dict[int, float]:
    if isinstance(f, Mapping):
        return {int(k): float(x) for k, x in f.items()}
    return {v: float(x) for v, x in zip(structure.complex.vertices, f)}


def edge_weights(structure: RiemannianStructure, v: int) -> Dict[int, float]:
    """Metric edge weights ``<e,e>^(1/2)`` of the edges at ``v``."""
    return {w: structure.edge_length((v, w)) for w in structure.complex.neighbors(v)}


def functional_mean_curvature(structure: RiemannianStructure, f, v: int,
                              weights: Optional[Mapping[int, float]] = None,
                              eps: float = EPS_DENOM) -> float:
    """``Delta f(v) / (f(v) - fbar_v)`` with metric edge weights.

    Returns ``nan`` (indeterminate) when the denominator is below ``eps``.
    """
    fv = _values(f, structure)
    w = dict(weights) if weights is not None else edge_weights(structure, v)
    if not w:
        raise InputError(f"vertex {v} is isolated")
    total = sum(w.values())
    if total <= 0:
        return math.nan
    lap = sum(wt * (fv[u] - fv[v]) for u, wt in w.items())
    fbar = sum(wt * fv[u] for u, wt in w.items()) / total
    den = fv[v] - fbar
    if abs(den) < eps:
        return math.nan
    return lap / den


def functional_angle_curvature(structure: RiemannianStructure, f, v: int, eps: float = EPS_COS) -> float:
    """Mean of ``log((1 + c) / (1 - c))`` over ordered pairs of distinct incident edges.

    ``c`` is the metric cosine between the edges, signed by whether ``f``
    changes the same way along both.
    """
    fv = _values(f, structure)
    nbrs = structure.complex.neighbors(v)
    if len(nbrs) < 2:
        raise InputError(f"vertex {v} has fewer than two incident edges")
    edges = [simplex(v, u) for u in nbrs]
    df = [fv[u] - fv[v] for u in nbrs]
    total = 0.0
    m = len(edges)
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            c = float(np.sign(df[i] * df[j])) * _unit_cos(structure, v, edges[i], edges[j])
            c = min(max(c, -1.0 + eps), 1.0 - eps)
            total += math.log((1.0 + c) / (1.0 - c))
    return total / (m * (m - 1))


def functional_level_curvature(structure: RiemannianStructure, f, v: int,
                               dist: Optional[Mapping[int, float]] = None) -> float:
    """Population variance of the directional derivatives ``(f(w) - f(v)) / d(v,w)``.

    Neighbours at zero distance (point contacts) are skipped.
    """
    fv = _values(f, structure)
    d = dict(dist) if dist is not None else edge_weights(structure, v)
    ratios = [(fv[w] - fv[v]) / dw for w, dw in sorted(d.items()) if dw > 0]
    if not ratios:
        raise InputError(f"vertex {v} has no neighbour at positive distance")
    arr = np.asarray(ratios)
    return float(np.mean((arr - arr.mean()) ** 2))
