"""Tree ensembles: refined overlays, co-occurrence, ensemble metrics and boosting flow."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import polytope as pt
from .calculus import hodge_operators, laplacian_spectrum, spectral_signature
from .complex import Simplex, SimplicialComplex, simplex
from .errors import InputError
from .metric import RiemannianStructure
from .partition import Box, Domain, HPolytope, Partition, PartitionCell, Predictor, build_nerve

KAPPA_CAP = 1e12


def _halfspace_form(geo, n: int) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(geo, Box):
        A, c = pt.box_halfspaces(geo.array)
        return A, -c
    return np.array(geo.W, dtype=float).reshape(-1, n), np.array(geo.b, dtype=float)


def intersect_geometry(a, b, domain: Domain, tol: float = 1e-9):
    """Intersection of two cell geometries, or ``None`` if its interior is empty."""
    n = domain.ambient_dim
    if isinstance(a, Box) and isinstance(b, Box):
        A, B = a.array, b.array
        lo = np.maximum(A[:, 0], B[:, 0])
        hi = np.minimum(A[:, 1], B[:, 1])
        if np.any(hi - lo <= tol):
            return None
        return Box(tuple(zip(lo.tolist(), hi.tolist())))
    Wa, ba = _halfspace_form(a, n)
    Wb, bb = _halfspace_form(b, n)
    geo = HPolytope.from_arrays(np.vstack([Wa, Wb]), np.concatenate([ba, bb]))
    A, c = geo.halfspaces(domain)
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 0
    if np.any(c[~keep] < -tol):
        return None
    _, r = pt.chebyshev(A[keep] / norms[keep, None], c[keep] / norms[keep])
    return geo if r > tol else None


def _combine_predictors(preds: Sequence[Optional[Predictor]], aggregate: str) -> Optional[Predictor]:
    if any(p is None for p in preds) or aggregate == "none":
        return None
    if all(not p.is_affine for p in preds):
        vals = np.sum([p.value_vector() for p in preds], axis=0)
        return Predictor.const(vals / len(preds) if aggregate == "mean" else vals)
    return None


@dataclass
class EnsemblePartition:
    """Overlay of tree partitions.

    Attributes:
        trees: The member partitions.
        refined: All nonempty intersections, ids ``0..N-1`` in provenance order.
        provenance: Refined id to the source cell id in each tree.
    """

    trees: List[Partition]
    refined: Partition
    provenance: Dict[int, Tuple[int, ...]]

    @property
    def B(self) -> int:
        return len(self.trees)


def _overlay(base: Partition, base_prov: Dict[int, Tuple[int, ...]], tree: Partition,
             aggregate: str, counts: int) -> Tuple[Partition, Dict[int, Tuple[int, ...]], Dict[int, int]]:
    """Intersect every base cell with every tree cell; returns partition, provenance and parent map."""
    if tree.domain != base.domain:
        raise InputError("trees must share the domain")
    tol = base.config.tol
    items = []
    for c in base.cells:
        bb = base.bounding_box(c.id)
        for t in tree.cells:
            tb = tree.bounding_box(t.id)
            if np.any(bb[:, 0] >= tb[:, 1] - tol) or np.any(tb[:, 0] >= bb[:, 1] - tol):
                continue
            geo = intersect_geometry(c.geometry, t.geometry, base.domain, tol)
            if geo is None:
                continue
            items.append((base_prov[c.id] + (t.id,), c, t, geo))
    items.sort(key=lambda x: x[0])
    cells, prov, parent = [], {}, {}
    for i, (key, c, t, geo) in enumerate(items):
        pred = None
        if c.predictor is not None and t.predictor is not None and aggregate != "none":
            if aggregate == "mean":
                old = c.predictor.value_vector() * counts if not c.predictor.is_affine else None
                if old is not None and not t.predictor.is_affine:
                    pred = Predictor.const((old + t.predictor.value_vector()) / (counts + 1))
            else:
                pred = _combine_predictors([c.predictor, t.predictor], "sum")
        cells.append(PartitionCell(i, geo, pred))
        prov[i] = key
        parent[i] = c.id
    if not cells:
        raise InputError("overlay is empty")
    return Partition(base.domain, cells, None, base.config), prov, parent


def refine_ensemble(trees: Sequence[Partition], aggregate: str = "mean") -> EnsemblePartition:
    """Overlay ``trees`` into the partition of all nonempty cell intersections.

    ``aggregate`` combines constant leaf values: ``"mean"`` (forest),
    ``"sum"`` (boosting) or ``"none"``.
    """
    if not trees:
        raise InputError("no trees given")
    first = trees[0]
    for t in trees[1:]:
        if t.domain != first.domain:
            raise InputError("trees must share the domain")
    cells = [PartitionCell(i, c.geometry, c.predictor) for i, c in enumerate(first.cells)]
    refined = Partition(first.domain, cells, None, first.config)
    prov = {i: (c.id,) for i, c in enumerate(first.cells)}
    for b, t in enumerate(trees[1:], start=1):
        refined, prov, _ = _overlay(refined, prov, t, aggregate, b)
    return EnsemblePartition(list(trees), refined, prov)


def tree_adjacent(tree_complex: SimplicialComplex, cells: Sequence[int]) -> bool:
    """Whether source cells form a simplex in a tree's nerve (one shared cell counts)."""
    s = tuple(sorted(set(cells)))
    return len(s) == 1 or s in tree_complex


def tree_weights(B: int, eta: Optional[float] = None) -> List[Fraction]:
    """Tree weights ``eta^b`` for ``b = 1..B`` (all 1 when ``eta`` is None)."""
    if eta is None:
        return [Fraction(1)] * B
    if not eta > 0:
        raise InputError("eta must be positive")
    e = Fraction(eta)
    return [e**b for b in range(1, B + 1)]


class CooccurrenceTable:
    """Co-occurrence frequencies over the refined cells of an ensemble.

    Values are exact rationals internally and returned as floats.
    """

    def __init__(self, ensemble: EnsemblePartition, eta: Optional[float] = None, max_dim: int = 3):
        self.ensemble = ensemble
        self.eta = eta
        self.max_dim = max_dim
        self.weights = tree_weights(ensemble.B, eta)
        self.complexes = [build_nerve(t, max_dim, with_faces=False)[0] for t in ensemble.trees]
        self._cache: Dict[Simplex, Fraction] = {}

    def exact(self, cells: Sequence[int]) -> Fraction:
        key = tuple(sorted(set(int(c) for c in cells)))
        if key in self._cache:
            return self._cache[key]
        prov = self.ensemble.provenance
        for c in key:
            if c not in prov:
                raise InputError(f"unknown refined cell {c}")
        num = Fraction(0)
        for b, (w, K) in enumerate(zip(self.weights, self.complexes)):
            if tree_adjacent(K, [prov[c][b] for c in key]):
                num += w
        val = num / sum(self.weights)
        self._cache[key] = val
        return val

    def __call__(self, cells: Sequence[int]) -> float:
        return float(self.exact(cells))


def cooccurrence(ensemble: EnsemblePartition, cells: Sequence[int], eta: Optional[float] = None) -> float:
    """Fraction (or ``eta``-weighted fraction) of trees in which the cells' sources meet."""
    return CooccurrenceTable(ensemble, eta)(cells)


def freq(ensemble: EnsemblePartition, cell_geometry) -> float:
    """Fraction of trees having a cell that contains ``cell_geometry``.

    On refined cells this is 1 by construction.
    """
    dom = ensemble.refined.domain
    hits = 0
    for t in ensemble.trees:
        for c in t.cells:
            if _contains(c.geometry, cell_geometry, dom):
                hits += 1
                break
    return hits / ensemble.B


def _contains(outer, inner, domain: Domain, tol: float = 1e-9) -> bool:
    n = domain.ambient_dim
    if isinstance(outer, Box) and isinstance(inner, Box):
        o, i = outer.array, inner.array
        return bool(np.all(i[:, 0] >= o[:, 0] - tol) and np.all(i[:, 1] <= o[:, 1] + tol))
    A_in, c_in = (inner.halfspaces(domain))
    W, b = _halfspace_form(outer, n)
    from scipy.optimize import linprog

    for w, bb in zip(W, b):
        res = linprog(-w, A_ub=A_in, b_ub=c_in, bounds=[(None, None)] * n, method="highs")
        if res.status != 0 or -res.fun + bb > tol:
            return False
    return True


def mean_face_volumes(structure: RiemannianStructure) -> Dict[int, float]:
    """``vbar_p``: mean of ``vol_{n-p}(F_sigma)`` over p-simplices (zero convention for lower faces)."""
    K = structure.complex
    n = structure.n
    out = {0: float(np.mean([structure.vertex_volume(v) for v in K.vertices]))}
    for p in range(1, K.dim + 1):
        vals = []
        for s in K.simplices(p):
            f = structure.face(s)
            vals.append(f.measure if f.dim == n - p else 0.0)
        out[p] = float(np.mean(vals)) if vals else 0.0
    return out


class EnsembleTerms:
    """Provider of the ensemble additions to the metric (``lam``, ``freq``, ``K``)."""

    def __init__(self, ensemble: EnsemblePartition, table: CooccurrenceTable, lambdas: Mapping[int, float]):
        self.ensemble = ensemble
        self.table = table
        self.lambdas = dict(lambdas)
        self._freq: Dict[int, float] = {}

    def lam(self, p: int) -> float:
        return float(self.lambdas.get(p, 0.0))

    def freq(self, v: int) -> float:
        if v not in self._freq:
            self._freq[v] = freq(self.ensemble, self.ensemble.refined.cell(v).geometry)
        return self._freq[v]

    def K(self, cells: Sequence[int]) -> float:
        return self.table(cells)


def ensemble_metric(ensemble: EnsemblePartition, table: Optional[CooccurrenceTable] = None,
                    lambdas: Optional[Mapping[int, float]] = None, max_dim: int = 3,
                    complex_: Optional[SimplicialComplex] = None) -> RiemannianStructure:
    """Metric on the refined nerve with co-occurrence terms.

    ``lambdas`` defaults to the mean face volumes of the refined partition.
    """
    table = table or CooccurrenceTable(ensemble, max_dim=max_dim)
    if complex_ is None:
        complex_, _ = build_nerve(ensemble.refined, max_dim, with_faces=False)
    plain = RiemannianStructure(ensemble.refined, complex_, max_dim)
    lam = dict(lambdas) if lambdas is not None else mean_face_volumes(plain)
    return plain.with_ensemble(EnsembleTerms(ensemble, table, lam))


def geometric_energy_log(structure: RiemannianStructure) -> float:
    """``E = sum_v log kappa(G_v)`` (condition numbers capped at 1e12)."""
    total = 0.0
    for v in structure.complex.vertices:
        try:
            k = structure.gram_condition(v)
        except InputError:
            continue
        total += math.log(min(k, KAPPA_CAP))
    return total


@dataclass
class EdgeDelta:
    """Change of a vertex-star edge Gram entry between boosting iterations."""

    base: int
    e1: Simplex
    e2: Simplex
    parents: Tuple[int, int, int]
    geom: float
    ens: float
    ens_formula: Optional[float] = None


@dataclass
class BoostingState:
    """Refined partition, exact co-occurrences and monitoring history after ``m`` trees."""

    ensemble: EnsemblePartition
    m: int
    eta: Optional[float]
    lambdas: Dict[int, float]
    K: Dict[Simplex, Fraction]
    weight_sum: Fraction
    complex: SimplicialComplex
    structure: RiemannianStructure
    history: List[Dict[str, object]] = field(default_factory=list)
    max_dim: int = 3

    def k(self, cells: Sequence[int]) -> float:
        key = tuple(sorted(set(cells)))
        if len(key) == 1:
            return 1.0
        return float(self.K[key])


class _FixedTable:
    """Co-occurrence lookup from a stored table with an exact fallback."""

    def __init__(self, values: Dict[Simplex, Fraction], fallback: CooccurrenceTable):
        self.values = values
        self.fallback = fallback

    def __call__(self, cells):
        key = tuple(sorted(set(cells)))
        if key in self.values:
            return float(self.values[key])
        return self.fallback(key)


def _snapshot(structure: RiemannianStructure, K: Mapping[Simplex, Fraction], m: int) -> Dict[str, object]:
    ops = hodge_operators(structure)
    gaps = laplacian_spectrum(ops)
    pair_k = [float(v) for s, v in K.items() if len(s) == 2]
    return {
        "m": m,
        "E": geometric_energy_log(structure),
        "gaps": gaps,
        "cells": len(structure.complex.vertices),
        "mean_K": float(np.mean(pair_k)) if pair_k else 1.0,
    }


def _build_structure(ensemble, K, lambdas, table, max_dim):
    complex_, _ = build_nerve(ensemble.refined, max_dim, with_faces=False)
    terms = EnsembleTerms(ensemble, _FixedTable(K, table), lambdas)
    return complex_, RiemannianStructure(ensemble.refined, complex_, max_dim, ensemble=terms)


def start_boosting(first_tree: Partition, eta: Optional[float] = None,
                   lambdas: Optional[Mapping[int, float]] = None, max_dim: int = 3) -> BoostingState:
    """State after the first tree; ``lambdas`` default to its mean face volumes and stay fixed."""
    ens = refine_ensemble([first_tree], aggregate="sum")
    table = CooccurrenceTable(ens, eta, max_dim)
    complex_, _ = build_nerve(ens.refined, max_dim, with_faces=False)
    lam = dict(lambdas) if lambdas is not None else mean_face_volumes(RiemannianStructure(ens.refined, complex_, max_dim))
    K = {s: table.exact(s) for p in range(1, complex_.dim + 1) for s in complex_.simplices(p)}
    complex_, structure = _build_structure(ens, K, lam, table, max_dim)
    state = BoostingState(ens, 1, eta, lam, K, table.weights[0], complex_, structure, max_dim=max_dim)
    state.history.append(_snapshot(structure, K, 1))
    return state


def boosting_step(state: BoostingState, new_tree: Partition) -> Tuple[BoostingState, List[EdgeDelta]]:
    """Add one tree: overlay, incremental co-occurrence update and Gram deltas.

    Deltas are reported on the new refined cells; each is compared with
    its parent cells from the previous iteration.
    """
    old = state.ensemble
    m = state.m
    refined, prov, parent = _overlay(old.refined, old.provenance, new_tree, "sum", m)
    ens = EnsemblePartition(old.trees + [new_tree], refined, prov)
    w_new = tree_weights(m + 1, state.eta)[-1]
    total = state.weight_sum + w_new
    new_complex, _ = build_nerve(new_tree, state.max_dim, with_faces=False)
    complex_, _ = build_nerve(refined, state.max_dim, with_faces=False)
    old_table = CooccurrenceTable(old, state.eta, state.max_dim)
    K: Dict[Simplex, Fraction] = {}
    for p in range(1, complex_.dim + 1):
        for s in complex_.simplices(p):
            ps = tuple(sorted({parent[v] for v in s}))
            k_old = Fraction(1) if len(ps) == 1 else state.K.get(ps)
            if k_old is None:
                k_old = old_table.exact(ps)
            ind = 1 if tree_adjacent(new_complex, [prov[v][-1] for v in s]) else 0
            K[s] = incremental_k(k_old, ind, state.weight_sum, w_new)
    table = CooccurrenceTable(ens, state.eta, state.max_dim)
    complex_, structure = _build_structure(ens, K, state.lambdas, table, state.max_dim)
    new_state = BoostingState(ens, m + 1, state.eta, state.lambdas, K, total, complex_, structure,
                              list(state.history), state.max_dim)
    new_state.history.append(_snapshot(structure, K, m + 1))
    lam1 = state.lambdas.get(1, 0.0)
    deltas: List[EdgeDelta] = []
    old_s = state.structure
    for v in complex_.vertices:
        nbrs = complex_.neighbors(v)
        for a in nbrs:
            for b in nbrs:
                if b < a:
                    continue
                e1, e2 = simplex(v, a), simplex(v, b)
                pv, pa, pb = parent[v], parent[a], parent[b]
                g_new = structure.edge_geometric(v, e1, e2)
                # an off-diagonal entry between two descendants of one parent edge is new
                g_old = _old_geometric(old_s, pv, pa, pb) if (a == b) == (pa == pb) else 0.0
                k_new = math.sqrt(float(K[e1] * K[e2]))
                k_old = math.sqrt(state.k((pv, pa)) * state.k((pv, pb)))
                formula = None
                if a == b and state.eta is None:
                    ind = 1 if tree_adjacent(new_complex, [prov[v][-1], prov[a][-1]]) else 0
                    formula = float(delta_ens(lam1, m, ind, _exact_old(state, old_table, pv, pa)))
                ens_delta = (float(Fraction(lam1) * (K[e1] - _exact_old(state, old_table, pv, pa)))
                             if a == b else lam1 * (k_new - k_old))
                deltas.append(EdgeDelta(v, e1, e2, (pv, pa, pb), g_new - g_old, ens_delta, formula))
    return new_state, deltas


def delta_ens(lam1: float, m: int, indicator: int, k_old) -> Fraction:
    """Ensemble change of a diagonal edge entry: ``lam1 / (m+1) * (1[adjacent] - K^(m))``."""
    return Fraction(lam1) / (m + 1) * (int(indicator) - Fraction(k_old))


def incremental_k(k_old, indicator: int, weight_sum, w_new) -> Fraction:
    """Co-occurrence after one more tree from the running weighted average."""
    ws, wn = Fraction(weight_sum), Fraction(w_new)
    return (ws * Fraction(k_old) + wn * int(indicator)) / (ws + wn)


def _exact_old(state: BoostingState, table: CooccurrenceTable, a: int, b: int) -> Fraction:
    key = tuple(sorted({a, b}))
    if len(key) == 1:
        return Fraction(1)
    val = state.K.get(key)
    return val if val is not None else table.exact(key)


def _old_geometric(structure: RiemannianStructure, v: int, a: int, b: int) -> float:
    if v == a or v == b:
        return 0.0
    e1, e2 = simplex(v, a), simplex(v, b)
    if e1 not in structure.complex or e2 not in structure.complex:
        return 0.0
    return structure.edge_geometric(v, e1, e2)


def batch_cooccurrence(trees: Sequence[Partition], eta: Optional[float] = None,
                       max_dim: int = 3) -> Tuple[EnsemblePartition, Dict[Simplex, Fraction]]:
    """Co-occurrence over all refined nerve simplices computed from scratch."""
    ens = refine_ensemble(trees, aggregate="sum")
    table = CooccurrenceTable(ens, eta, max_dim)
    complex_, _ = build_nerve(ens.refined, max_dim, with_faces=False)
    return ens, {s: table.exact(s) for p in range(1, complex_.dim + 1) for s in complex_.simplices(p)}


def monitor(state: BoostingState) -> List[Dict[str, object]]:
    """Per-iteration trace with spectral ratios and geometric health."""
    gaps = [h["gaps"] for h in state.history]
    sig = spectral_signature(gaps, 0)
    rows = []
    for h, r, health in zip(state.history, sig.ratios, sig.health):
        row = {"m": h["m"], "E": h["E"], "cells": h["cells"], "mean_K": h["mean_K"], "health": health}
        for p, val in sorted(r.items()):
            row["ratio_0" if p == 0 else f"ratio_{p}"] = val
        rows.append(row)
    return rows


def trace_csv(rows: Sequence[Mapping[str, object]]) -> str:
    """CSV text of a monitoring trace with a stable column order."""
    keys = ["m", "E", "ratio_0"] + sorted({k for r in rows for k in r if k.startswith("ratio_") and k != "ratio_0"})
    keys += ["health", "cells", "mean_K"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n", restval="")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items() if k in keys})
    return buf.getvalue()


def regularized_tree_penalty(state: BoostingState, candidate: Partition) -> float:
    """``-sum K(C_i, C_j)`` over overlay pairs that sit in different adjacent candidate leaves."""
    old = state.ensemble
    refined, prov, parent = _overlay(old.refined, old.provenance, candidate, "none", state.m)
    K_cand, _ = build_nerve(candidate, 1, with_faces=False)
    K_ov, _ = build_nerve(refined, 1, with_faces=False)
    total = 0.0
    for a, b in K_ov.simplices(1):
        la, lb = prov[a][-1], prov[b][-1]
        if la == lb or (min(la, lb), max(la, lb)) not in K_cand:
            continue
        total += state.k((parent[a], parent[b])) if parent[a] != parent[b] else 1.0
    return -total


# -- fixture trees ---------------------------------------------------------

@dataclass
class _Node:
    bounds: np.ndarray
    idx: np.ndarray


def fit_tree(X: np.ndarray, y: np.ndarray, domain: Domain, max_depth: int = 3,
             min_leaf: int = 1) -> Partition:
    """Small CART regressor (variance reduction, constant leaves) returning a box partition."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise InputError("X must be (N, n) and y of length N > 0")
    leaves = []

    def grow(node: _Node, depth: int):
        yi = y[node.idx]
        best = None
        if depth < max_depth and len(node.idx) >= 2 * min_leaf:
            base = float(np.sum((yi - yi.mean()) ** 2))
            for k in range(X.shape[1]):
                xs = X[node.idx, k]
                order = np.argsort(xs, kind="stable")
                xs_s, ys = xs[order], yi[order]
                for i in range(min_leaf, len(xs_s) - min_leaf + 1):
                    if xs_s[i - 1] == xs_s[i]:
                        continue
                    l, r = ys[:i], ys[i:]
                    gain = base - float(np.sum((l - l.mean()) ** 2) + np.sum((r - r.mean()) ** 2))
                    if best is None or gain > best[0] + 1e-12:
                        best = (gain, k, (xs_s[i - 1] + xs_s[i]) / 2.0)
        if best is None or best[0] <= 1e-12:
            leaves.append((node.bounds, node.idx, float(yi.mean())))
            return
        _, k, t = best
        lb, rb = node.bounds.copy(), node.bounds.copy()
        lb[k, 1] = t
        rb[k, 0] = t
        mask = X[node.idx, k] < t
        grow(_Node(lb, node.idx[mask]), depth + 1)
        grow(_Node(rb, node.idx[~mask]), depth + 1)

    grow(_Node(domain.array.copy(), np.arange(len(y))), 0)
    cells = [PartitionCell(i, Box(tuple(map(tuple, b.tolist()))), Predictor.const(v)) for i, (b, _, v) in enumerate(leaves)]
    data = {i: idx.tolist() for i, (_, idx, _) in enumerate(leaves)}
    return Partition(domain, cells, data)


def random_tree(domain: Domain, depth: int, rng: np.random.Generator, min_width: float = 0.05) -> Partition:
    """Random axis-aligned tree partition with constant leaves (for tests and fixtures)."""
    boxes = []

    def grow(b: np.ndarray, d: int):
        widths = b[:, 1] - b[:, 0]
        if d == depth or np.all(widths < 2 * min_width):
            boxes.append(b)
            return
        k = int(rng.choice(np.flatnonzero(widths >= 2 * min_width)))
        t = float(rng.uniform(b[k, 0] + min_width, b[k, 1] - min_width))
        lb, rb = b.copy(), b.copy()
        lb[k, 1] = t
        rb[k, 0] = t
        grow(lb, d + 1)
        grow(rb, d + 1)

    grow(domain.array.copy(), 0)
    cells = [PartitionCell(i, Box(tuple(map(tuple, b.tolist()))), Predictor.const(float(rng.normal())))
             for i, b in enumerate(boxes)]
    return Partition(domain, cells)
