"""Statistical Ricci curvature on edges, curvature reports and aggregate scores."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from . import curvature as cv
from .complex import Simplex, simplex
from .density import DensityField, Geodesics, WeightedGraph, all_pairs
from .errors import InputError, InvariantError
from .metric import RiemannianStructure

PERCENTILES = (5.0, 25.0, 50.0, 75.0, 95.0)


def wasserstein1(mu: Mapping[int, float], nu: Mapping[int, float], cost) -> float:
    """Earth mover's distance between two finite measures of equal mass.

    Args:
        mu, nu: Point masses keyed by vertex.
        cost: Callable ``cost(a, b)`` giving the ground distance.
    """
    xs, ys = sorted(mu), sorted(nu)
    a = np.array([mu[x] for x in xs], dtype=float)
    b = np.array([nu[y] for y in ys], dtype=float)
    if abs(a.sum() - b.sum()) > 1e-9 * max(a.sum(), 1.0):
        raise InputError("measures have different total mass")
    if dict(mu) == dict(nu):
        return 0.0
    if len(xs) == 1:
        return float(sum(bj * cost(xs[0], y) for y, bj in zip(ys, b)))
    if len(ys) == 1:
        return float(sum(ai * cost(x, ys[0]) for x, ai in zip(xs, a)))
    m, n = len(xs), len(ys)
    C = np.array([[cost(x, y) for y in ys] for x in xs], dtype=float).ravel()
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A_eq[m + j, j::n] = 1.0
    res = linprog(C, A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    if res.status != 0:
        raise InvariantError(f"transport LP failed: {res.message}")
    return float(res.fun)


def neighbor_measure(graph: WeightedGraph, structure: RiemannianStructure, v: int) -> Dict[int, float]:
    """Probability on the neighbours of ``v`` proportional to metric edge length."""
    nbrs = graph.neighbors(v)
    if not nbrs:
        raise InputError(f"vertex {v} is isolated")
    w = np.array([structure.edge_length((v, u)) for u in nbrs])
    if w.sum() <= 0:
        w = np.ones(len(nbrs))
    w = w / w.sum()
    return {u: float(x) for u, x in zip(nbrs, w)}


def ricci_geometric(graph: WeightedGraph, structure: RiemannianStructure, v: int, w: int,
                    geos: Optional[Mapping[int, Geodesics]] = None,
                    measures: Optional[Mapping[int, Dict[int, float]]] = None) -> float:
    """``1 - W1(mu_v, mu_w) / d(v, w)`` with geodesic ground cost."""
    if simplex(v, w) not in graph.lengths:
        raise InputError(f"edge {(v, w)} is not in the graph")
    geos = geos if geos is not None else all_pairs(graph)
    mu = measures[v] if measures is not None else neighbor_measure(graph, structure, v)
    nu = measures[w] if measures is not None else neighbor_measure(graph, structure, w)
    W1 = wasserstein1(mu, nu, lambda a, b: geos[a].distance[b])
    return 1.0 - W1 / geos[v].distance[w]


def ricci_density(field: DensityField, v: int, w: int) -> float:
    """``(2 / rho(e)) * ((rho(v) + rho(w)) / 2 - rho(e))``."""
    re = field.rho_edge.get(simplex(v, w))
    if re is None:
        raise InputError(f"no edge density for {(v, w)}")
    if re <= 0:
        raise InputError("edge density must be positive")
    return (2.0 / re) * ((field.rho_vertex[v] + field.rho_vertex[w]) / 2.0 - re)


@dataclass
class CurvatureConfig:
    """Parameters of the curvature suite (all defaults recorded in reports)."""

    r_grid: Tuple[float, ...] = ()
    r_factors: Tuple[float, ...] = (1.0, 2.0)
    sphere_band: Optional[float] = None
    dbar: Optional[float] = None
    eps: float = 1e-9
    eps_denom: float = cv.EPS_DENOM
    eps_cos: float = cv.EPS_COS
    tau: float = 1.0
    beta: float = 0.5
    gamma: float = 0.5
    alphas: Tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    lam: float = 1.0
    stat_vertex: str = "f_mean"


@dataclass
class FunctionalParts:
    mean: float
    level: float
    direct: float
    response: Optional[float]
    total: float
    weights: Tuple[float, float, float, float]


def direct_component(structure: RiemannianStructure, v: int, w: int, beta: float, gamma: float,
                     grad_avg: float) -> float:
    """Jump of the local predictors across an edge."""
    part = structure.partition
    pv, pw = part.cell(v).predictor, part.cell(w).predictor
    if pv is None or pw is None:
        raise InputError("direct component needs predictors on both cells")
    if not pv.is_affine and not pw.is_affine:
        cvv, cww = pv.value_vector(), pw.value_vector()
        den = float(cvv @ cvv + cww @ cww)
        if den == 0:
            return 1.0
        return 1.0 - gamma * float(np.sum((cvv - cww) ** 2)) / den
    n = part.n
    diff = pv.gradient(n) - pw.gradient(n)
    jump = float(np.sum(diff**2))
    if grad_avg == 0:
        return 1.0 if jump == 0 else -math.inf
    return 1.0 - beta * jump / grad_avg**2


def response_component(structure: RiemannianStructure, v: int, w: int, X: np.ndarray, y: np.ndarray) -> Optional[float]:
    """Coefficient of determination of the local predictors on the data of both cells."""
    part = structure.partition
    num = 0.0
    ys = []
    for c in (v, w):
        idx = part.data_index.get(c, [])
        if not idx:
            continue
        pred = part.cell(c).predictor
        if pred is None:
            raise InputError("response component needs predictors")
        fx = pred(X[idx])[:, 0]
        num += float(np.sum((fx - y[idx]) ** 2))
        ys.extend(y[idx].tolist())
    if not ys:
        return None
    ys = np.asarray(ys)
    den = float(np.sum((ys - ys.mean()) ** 2))
    if den == 0:
        return 1.0 if num == 0 else None
    return 1.0 - num / den


def gradient_average(graph: WeightedGraph, f: Mapping[int, float]) -> float:
    """Mean over graph edges of ``|f(a) - f(b)| / d(a, b)``."""
    vals = [abs(f[a] - f[b]) / d for (a, b), d in graph.lengths.items()]
    return float(np.mean(vals)) if vals else 0.0


def ricci_functional(structure: RiemannianStructure, graph: WeightedGraph, f: Mapping[int, float],
                     v: int, w: int, kappa_mean: Mapping[int, float], kappa_level: Mapping[int, float],
                     geos: Mapping[int, Geodesics], config: CurvatureConfig,
                     X: Optional[np.ndarray] = None, y: Optional[np.ndarray] = None,
                     grad_avg: Optional[float] = None) -> FunctionalParts:
    """Weighted sum of the mean, level, direct and response components."""
    a = np.asarray(config.alphas, dtype=float)
    if np.any(a < 0) or a.sum() <= 0:
        raise InputError("functional weights must be nonnegative with positive sum")
    a = a / a.sum()
    kv = 0.0 if math.isnan(kappa_mean[v]) else kappa_mean[v]
    kw = 0.0 if math.isnan(kappa_mean[w]) else kappa_mean[w]
    mean = 1.0 - abs(kv - kw) / (abs(kv) + abs(kw) + config.eps)
    g = gradient_average(graph, f) if grad_avg is None else grad_avg
    d = geos[v].distance[w]
    diff = abs(f[v] - f[w])
    if g == 0:
        level = 1.0
    else:
        level = 1.0 - (math.sqrt(kappa_level[v]) + math.sqrt(kappa_level[w])) / 2.0 * diff / (d * g)
    direct = direct_component(structure, v, w, config.beta, config.gamma, g) if a[2] > 0 else 0.0
    response = None
    if a[3] > 0:
        if X is not None and y is not None:
            response = response_component(structure, v, w, X, y)
        if response is None:
            warnings.warn(f"response component skipped on edge {(v, w)}; weights renormalized")
            a = a.copy()
            a[3] = 0.0
            a = a / a.sum()
    total = a[0] * mean + a[1] * level + a[2] * direct + (a[3] * response if response is not None else 0.0)
    return FunctionalParts(mean, level, direct, response, float(total), tuple(float(x) for x in a))


@dataclass
class CurvatureReport:
    """Per-vertex and per-edge curvature values with aggregate scores."""

    vertex: Dict[int, Dict[str, object]]
    edge: Dict[Simplex, Dict[str, object]]
    stat_vertex: Dict[int, float]
    stat_edge: Dict[Simplex, float]
    r_grid: List[float]
    config: CurvatureConfig
    sphere_band: float = 0.0
    dbar: float = 0.0
    lbar: float = 0.0
    R: float = 0.0
    E: float = 0.0
    distribution: Dict[str, float] = field(default_factory=dict)


def huber(x: float, tau: float) -> float:
    """``x^2`` for ``|x| <= tau`` and ``2 tau |x| - tau^2`` beyond."""
    ax = abs(x)
    return x * x if ax <= tau else 2.0 * tau * ax - tau * tau


def regularizer(stat_vertex: Mapping[int, float], stat_edge: Mapping[Simplex, float],
                tau: float = 1.0, lam: float = 1.0) -> float:
    """``sum_v phi(kappa(v)) + lam * sum_e Ric(e)^2``."""
    return float(sum(huber(k, tau) for k in stat_vertex.values()) + lam * sum(r * r for r in stat_edge.values()))


def geometric_energy(stat_vertex: Mapping[int, float], stat_edge: Mapping[Simplex, float],
                     structure: RiemannianStructure, lam: float = 1.0) -> float:
    """Volume-weighted squared curvatures."""
    ev = sum(k * k * structure.vertex_volume(v) for v, k in stat_vertex.items())
    ee = sum(r * r * structure.facet_measure(e) for e, r in stat_edge.items())
    return float(ev + lam * ee)


def summarize(values: Sequence[float]) -> Dict[str, float]:
    """Fixed percentiles, mean and negative fraction of a curvature multiset."""
    arr = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if arr.size == 0:
        return {**{f"p{int(q)}": 0.0 for q in PERCENTILES}, "mean": 0.0, "frac_negative": 0.0, "count": 0}
    out = {f"p{int(q)}": float(np.percentile(arr, q)) for q in PERCENTILES}
    out["mean"] = float(arr.mean())
    out["frac_negative"] = float(np.mean(arr < 0))
    out["count"] = int(arr.size)
    return out


def curvature_distribution(snapshots: Sequence[CurvatureReport]) -> List[Dict[str, float]]:
    """Per-snapshot summary of vertex and edge statistical curvatures plus ``E(t)``."""
    if not snapshots:
        raise InputError("no snapshots")
    out = []
    for rep in snapshots:
        s = summarize(list(rep.stat_vertex.values()) + list(rep.stat_edge.values()))
        s["E"] = rep.E
        out.append(s)
    return out


def vertex_function(structure: RiemannianStructure, f=None) -> Dict[int, float]:
    """Vertex values from an explicit mapping or from the cell predictors."""
    if f is not None:
        return cv._values(f, structure)
    out = {}
    part = structure.partition
    for v in structure.complex.vertices:
        pred = part.cell(v).predictor
        if pred is None:
            raise InputError(f"cell {v} has no predictor and no vertex function was given")
        x = part.cell_flat(v).point
        out[v] = float(pred(x)[0, 0])
    return out


def curvature_report(structure: RiemannianStructure, field: DensityField, graph: WeightedGraph,
                     f=None, X: Optional[np.ndarray] = None, y: Optional[np.ndarray] = None,
                     config: Optional[CurvatureConfig] = None, workers: int = 1) -> CurvatureReport:
    """Compute every vertex and edge measure and the aggregate scores."""
    cfg = config or CurvatureConfig()
    fv = vertex_function(structure, f)
    geos = all_pairs(graph, workers)
    dbar = cfg.dbar if cfg.dbar is not None else graph.mean_edge_length()
    r_grid = list(cfg.r_grid) if cfg.r_grid else [fac * dbar for fac in cfg.r_factors]
    band = cfg.sphere_band if cfg.sphere_band is not None else 0.5 * dbar
    lbar = cv.mean_cell_diameter(structure.partition)
    verts = structure.complex.vertices
    vrep: Dict[int, Dict[str, object]] = {}
    k_mean, k_level = {}, {}
    for v in verts:
        rec: Dict[str, object] = {}
        iso = graph.degree(v) == 0
        rec["ball"] = [None if iso else cv.ball_curvature(graph, field, v, r, geos[v]) for r in r_grid]
        rec["dist"] = None if iso else cv.dist_curvature(graph, v, dbar, geos[v])
        sprays = [None if iso else cv.spray_curvature(graph, structure, v, r, geos, band) for r in r_grid]
        rec["spray"] = [None if s is None else s.kappa for s in sprays]
        rec["spray_angle"] = [None if s is None else s.theta_angle for s in sprays]
        rec["spray_spread"] = [None if s is None else s.theta_spread for s in sprays]
        rec["tri"] = None if iso else cv.tri_curvature(graph, v, geos)
        rec["path"] = [None if iso else cv.path_curvature(graph, v, r, lbar, geos[v], band) for r in r_grid]
        nb = structure.complex.neighbors(v)
        k_mean[v] = cv.functional_mean_curvature(structure, fv, v, eps=cfg.eps_denom) if nb else math.nan
        rec["f_mean"] = None if math.isnan(k_mean[v]) else k_mean[v]
        rec["f_mean_indeterminate"] = bool(math.isnan(k_mean[v]))
        rec["f_angle"] = cv.functional_angle_curvature(structure, fv, v, cfg.eps_cos) if len(nb) >= 2 else None
        try:
            k_level[v] = cv.functional_level_curvature(structure, fv, v)
        except InputError:
            k_level[v] = 0.0
        rec["f_level"] = k_level[v]
        vrep[v] = rec
    grad_avg = gradient_average(graph, fv)
    measures = {v: neighbor_measure(graph, structure, v) for v in verts if graph.degree(v) > 0}
    erep: Dict[Simplex, Dict[str, object]] = {}
    stat_edge: Dict[Simplex, float] = {}
    for e in sorted(graph.lengths):
        v, w = e
        geom = ricci_geometric(graph, structure, v, w, geos, measures)
        dens = ricci_density(field, v, w)
        func = ricci_functional(structure, graph, fv, v, w, k_mean, k_level, geos, cfg, X, y, grad_avg)
        total = geom + dens + func.total
        erep[e] = {
            "geom": geom, "dens": dens, "func": func.total,
            "func_mean": func.mean, "func_level": func.level, "func_direct": func.direct,
            "func_response": func.response, "stat": total,
        }
        stat_edge[e] = total
    stat_vertex = {}
    for v in verts:
        val = vrep[v].get(cfg.stat_vertex)
        if isinstance(val, list):
            val = val[0]
        stat_vertex[v] = 0.0 if val is None or not np.isfinite(val) else float(val)
    rep = CurvatureReport(vrep, erep, stat_vertex, stat_edge, r_grid, cfg, sphere_band=band, dbar=dbar, lbar=lbar)
    rep.R = regularizer(stat_vertex, stat_edge, cfg.tau, cfg.lam)
    rep.E = geometric_energy(stat_vertex, stat_edge, structure, cfg.lam)
    rep.distribution = summarize(list(stat_vertex.values()) + list(stat_edge.values()))
    return rep


def config_dict(cfg: CurvatureConfig) -> Dict[str, object]:
    return asdict(cfg)
