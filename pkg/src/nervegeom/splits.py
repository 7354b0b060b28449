"""Geometric penalties of a partition and local scoring of candidate splits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Set, Tuple

import numpy as np

from . import polytope as pt
from .complex import Simplex, SimplicialComplex
from .errors import InputError
from .metric import RiemannianStructure
from .partition import Box, HPolytope, Partition, PartitionCell, build_nerve, dihedral_cos

KAPPA_CAP = 1e12


def phi0(t: float) -> float:
    """Convex volume-balance penalty ``t + 1/t``."""
    if t <= 0:
        raise InputError("relative volume must be positive")
    return t + 1.0 / t


def h_angle(theta: float) -> float:
    """Angle penalty ``(pi/2 - |theta - pi/2|)^2``."""
    return (math.pi / 2.0 - abs(theta - math.pi / 2.0)) ** 2


@dataclass
class PenaltyConfig:
    """Weights of the per-dimension penalties.

    ``vol_ref`` maps a simplex dimension to its reference face measure; it
    is filled from the partition on first use and then kept fixed.
    """

    lambdas: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    gamma: float = 1.0
    alpha: float = 2.0
    beta: float = 1.0
    p0: int = 1
    max_dim: int = 3
    vol_ref: Dict[int, float] = field(default_factory=dict)

    def lam(self, p: int) -> float:
        return self.lambdas[p] if p < len(self.lambdas) else 0.0


@dataclass(frozen=True)
class CandidateSplit:
    """Cut of one cell by the hyperplane ``normal . x + offset = 0``.

    The side ``normal . x + offset <= 0`` becomes ``new_ids[0]`` and the
    other side ``new_ids[1]``.
    """

    cell: int
    normal: Tuple[float, ...]
    offset: float
    new_ids: Optional[Tuple[int, int]] = None

    @classmethod
    def axis(cls, cell: int, dim: int, value: float, n: int, new_ids=None) -> "CandidateSplit":
        w = [0.0] * n
        w[dim] = 1.0
        return cls(cell, tuple(w), -float(value), new_ids)


def _ids_for(partition: Partition, split: CandidateSplit) -> Tuple[int, int]:
    if split.new_ids is not None:
        a, b = split.new_ids
        taken = set(partition.ids) - {split.cell}
        if a == b or a in taken or b in taken:
            raise InputError("new cell ids collide with existing cells")
        return a, b
    return split.cell, max(partition.ids) + 1


def apply_split(partition: Partition, split: CandidateSplit) -> Partition:
    """Partition with ``split.cell`` replaced by its two sides."""
    cell = partition.cell(split.cell)
    n = partition.n
    w = np.asarray(split.normal, dtype=float)
    if w.shape != (n,) or not np.any(w):
        raise InputError("split normal must be a nonzero vector of the ambient dimension")
    lo_id, hi_id = _ids_for(partition, split)
    geo = cell.geometry
    nz = np.flatnonzero(w)
    if isinstance(geo, Box) and len(nz) == 1:
        k = int(nz[0])
        value = -split.offset / w[k]
        lo, hi = geo.bounds[k]
        if not lo < value < hi:
            raise InputError(f"split at {value} lies outside cell {split.cell} bounds {(lo, hi)}")
        below = list(geo.bounds)
        above = list(geo.bounds)
        below[k] = (lo, value)
        above[k] = (value, hi)
        if w[k] < 0:
            below, above = above, below
        sides = [Box(tuple(below)), Box(tuple(above))]
    else:
        if isinstance(geo, Box):
            A, c = pt.box_halfspaces(geo.array)
            W0, b0 = A, -c
        else:
            W0, b0 = np.array(geo.W, dtype=float).reshape(-1, n), np.array(geo.b, dtype=float)
        sides = [
            HPolytope.from_arrays(np.vstack([W0, w]), np.concatenate([b0, [split.offset]])),
            HPolytope.from_arrays(np.vstack([W0, -w]), np.concatenate([b0, [-split.offset]])),
        ]
    cells = [c for c in partition.cells if c.id != split.cell]
    cells += [PartitionCell(lo_id, sides[0], cell.predictor), PartitionCell(hi_id, sides[1], cell.predictor)]
    data = {k: v for k, v in partition.data_index.items() if k != split.cell}
    out = Partition(partition.domain, cells, data, partition.config)
    for cid in (lo_id, hi_id):
        f = out.flat((cid,))
        if f.empty or f.dim < n:
            raise InputError(f"split leaves an empty side of cell {split.cell}")
    return out


def reference_volumes(structure: RiemannianStructure) -> Dict[int, float]:
    """Mean face measure per simplex dimension (1 where undefined)."""
    out = {}
    for p in range(2, structure.complex.dim + 1):
        vals = [structure.face(s).measure for s in structure.complex.simplices(p)]
        m = float(np.mean(vals)) if vals else 0.0
        out[p] = m if m > 0 else 1.0
    return out


def _log_condition(structure: RiemannianStructure, v: int) -> float:
    try:
        k = structure.gram_condition(v)
    except InputError:
        return 0.0
    return math.log(min(k, KAPPA_CAP))


def edge_angle(structure: RiemannianStructure, e: Simplex) -> Optional[float]:
    """Mean interior angle between facet ``F_e`` and the facets meeting it in a ridge.

    Returns ``None`` when no other facet meets ``F_e``.
    """
    part = structure.partition
    n = part.n
    if n < 2 or structure.facet_measure(e) <= 0:
        return None
    fe = part.face(e)
    angles = []
    K = structure.complex
    for c in e:
        other = e[1] if c == e[0] else e[0]
        for k in K.neighbors(c):
            if k == other:
                continue
            tri = tuple(sorted((e[0], e[1], k)))
            if tri not in K or part.face(tri).dim != n - 2:
                continue
            fk = part.face((c, k))
            if fk.dim != n - 1:
                continue
            angles.append(math.acos(float(np.clip(dihedral_cos(part, c, fe, fk), -1.0, 1.0))))
    return float(np.mean(angles)) if angles else None


def psi0_condition(structure: RiemannianStructure, v: int, cfg: PenaltyConfig) -> float:
    return cfg.gamma * _log_condition(structure, v)


def psi1(structure: RiemannianStructure, e: Simplex, cfg: PenaltyConfig) -> float:
    m = structure.facet_measure(e)
    if m <= 0:
        return 0.0
    theta = edge_angle(structure, e)
    return 0.0 if theta is None else m**cfg.alpha * h_angle(theta)


def psi_p(structure: RiemannianStructure, s: Simplex, cfg: PenaltyConfig) -> float:
    p = len(s) - 1
    if p <= cfg.p0:
        return 0.0
    ref = cfg.vol_ref.get(p, 1.0)
    return (structure.face(s).measure / ref) ** cfg.beta


def volume_term(volumes: Sequence[float], domain_volume: float) -> float:
    mean = domain_volume / len(volumes)
    return float(sum(phi0(v / mean) for v in volumes))


def geometric_penalty(partition: Partition, cfg: Optional[PenaltyConfig] = None,
                      structure: Optional[RiemannianStructure] = None) -> float:
    """Total penalty ``sum_k lambda_k sum_{sigma in K_k} psi_k(sigma)``."""
    cfg = cfg or PenaltyConfig()
    if structure is None:
        K, _ = build_nerve(partition, cfg.max_dim)
        structure = RiemannianStructure(partition, K, cfg.max_dim)
    if not cfg.vol_ref:
        cfg.vol_ref = reference_volumes(structure)
    K = structure.complex
    vols = [partition.cell_volume(c) for c in partition.ids]
    total = cfg.lam(0) * (volume_term(vols, partition.domain.volume)
                          + sum(psi0_condition(structure, v, cfg) for v in K.vertices))
    total += cfg.lam(1) * sum(psi1(structure, e, cfg) for e in K.simplices(1))
    for p in range(2, K.dim + 1):
        total += cfg.lam(p) * sum(psi_p(structure, s, cfg) for s in K.simplices(p))
    return float(total)


def _hood(K: SimplicialComplex, v: int, hops: int) -> Set[int]:
    seen = {v}
    frontier = {v}
    for _ in range(hops):
        frontier = {u for w in frontier for u in K.neighbors(w)} - seen
        seen |= frontier
    return seen


def _local_sum(partition: Partition, ids: Iterable[int], centre: Set[int], cfg: PenaltyConfig) -> float:
    """Penalty contributions of the simplices that depend on the cells ``centre``."""
    sub = Partition(partition.domain, [partition.cell(i) for i in sorted(ids)], None, partition.config)
    sub._flats = partition._flats
    sub._faces = partition._faces
    K, _ = build_nerve(sub, cfg.max_dim)
    S = RiemannianStructure(sub, K, cfg.max_dim)
    hood1 = set(centre)
    for c in centre:
        hood1 |= set(K.neighbors(c))
    total = cfg.lam(0) * sum(psi0_condition(S, v, cfg) for v in sorted(hood1))
    total += cfg.lam(1) * sum(psi1(S, e, cfg) for e in K.simplices(1) if e[0] in hood1 or e[1] in hood1)
    for p in range(2, K.dim + 1):
        total += cfg.lam(p) * sum(psi_p(S, s, cfg) for s in K.simplices(p) if centre & set(s))
    return float(total)


@dataclass
class SplitScore:
    score: float
    delta_penalty: float
    impurity_reduction: float
    new_partition: Partition


def score_split(partition: Partition, structure: RiemannianStructure, split: CandidateSplit,
                impurity_reduction: float, eta: float, cfg: Optional[PenaltyConfig] = None) -> SplitScore:
    """``impurity_reduction - eta * (change in geometric penalty)``.

    Only the two-hop neighbourhood of the split cell is rebuilt; the
    volume-balance term is re-evaluated from cached cell volumes.
    """
    cfg = cfg or PenaltyConfig(max_dim=structure.max_dim)
    if not cfg.vol_ref:
        cfg.vol_ref = reference_volumes(structure)
    new = apply_split(partition, split)
    c = split.cell
    hood2 = _hood(structure.complex, c, 2)
    new_ids = set(new.ids) - (set(partition.ids) - {c})
    old_local = _local_sum(partition, hood2, {c}, cfg)
    new_local = _local_sum(new, (hood2 - {c}) | new_ids, new_ids, cfg)
    old_vols = {i: partition.cell_volume(i) for i in partition.ids}
    new_vols = [old_vols[i] for i in new.ids if i not in new_ids] + [new.cell_volume(i) for i in sorted(new_ids)]
    dvol = volume_term(new_vols, new.domain.volume) - volume_term(list(old_vols.values()), partition.domain.volume)
    delta = new_local - old_local + cfg.lam(0) * dvol
    return SplitScore(float(impurity_reduction - eta * delta), float(delta), float(impurity_reduction), new)
