"""ReLU networks: activation partitions, refined layer cells, simplicial maps and pullback volumes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import polytope as pt
from .complex import Simplex, SimplicialComplex
from .errors import InputError, InvariantError
from .metric import RiemannianStructure
from .partition import Box, Domain, GeometryConfig, HPolytope, Partition, PartitionCell, Predictor, build_nerve

Pattern = Tuple[int, ...]


@dataclass(frozen=True)
class LayerSpec:
    """One ReLU layer ``x -> max(0, W x + b)``."""

    W: Tuple[Tuple[float, ...], ...]
    b: Tuple[float, ...]
    activation: str = "relu"

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.activation != "relu":
            raise InputError(f"unsupported activation {self.activation!r}")
        if W.shape[0] != b.shape[0]:
            raise InputError("layer bias length differs from weight rows")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise InputError("layer weights must be finite")
        object.__setattr__(self, "W", tuple(map(tuple, W.tolist())))
        object.__setattr__(self, "b", tuple(b.tolist()))

    @classmethod
    def from_arrays(cls, W, b) -> "LayerSpec":
        return cls(tuple(map(tuple, np.atleast_2d(W).tolist())), tuple(np.atleast_1d(b).tolist()))

    @property
    def Wm(self) -> np.ndarray:
        return np.array(self.W, dtype=float)

    @property
    def bv(self) -> np.ndarray:
        return np.array(self.b, dtype=float)

    @property
    def in_dim(self) -> int:
        return len(self.W[0])

    @property
    def out_dim(self) -> int:
        return len(self.W)

    def pre(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(x) @ self.Wm.T + self.bv

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(self.pre(x), 0.0)

    def patterns(self, x: np.ndarray) -> np.ndarray:
        """Activation bits (1 where ``w_j . x + b_j > 0``)."""
        return (self.pre(x) > 0).astype(int)

    def affine(self, pattern: Pattern) -> Tuple[np.ndarray, np.ndarray]:
        """``(W_alpha, b_alpha)``: the layer with inactive rows zeroed."""
        a = np.asarray(pattern, dtype=float)
        return self.Wm * a[:, None], self.bv * a

    def region(self, pattern: Pattern) -> HPolytope:
        """Halfspaces of the activation region; active rows flip sign."""
        s = np.where(np.asarray(pattern) == 1, -1.0, 1.0)
        return HPolytope.from_arrays(self.Wm * s[:, None], self.bv * s)


def image_domain(layer: LayerSpec, domain: Domain) -> Domain:
    """Box containing the layer image of ``domain`` (interval arithmetic)."""
    if layer.in_dim != domain.ambient_dim:
        raise InputError("layer input width differs from the domain dimension")
    box = domain.array
    W = layer.Wm
    hi = np.maximum(W, 0) @ box[:, 1] + np.minimum(W, 0) @ box[:, 0] + layer.bv
    hi = np.where(hi > 0, hi, 1.0)
    return Domain(tuple((0.0, float(h)) for h in hi))


def auto_domain(data: np.ndarray) -> Domain:
    """Bounding box of the data (unit padding along flat directions)."""
    lo, hi = data.min(axis=0), data.max(axis=0)
    flat = hi - lo <= 0
    lo = np.where(flat, lo - 0.5, lo)
    hi = np.where(flat, hi + 0.5, hi)
    return Domain(tuple(zip(lo.tolist(), hi.tolist())))


@dataclass
class ActivationPartition:
    """Activation regions of a layer that contain data."""

    partition: Partition
    patterns: Dict[int, Pattern]
    layer: LayerSpec


def _check_interior(part: Partition, what: str):
    for cid in part.ids:
        f = part.flat((cid,))
        if f.empty or f.dim < part.n:
            raise InputError(f"{what} {cid} has empty interior")


def layer_partition(layer: LayerSpec, domain: Domain, data: np.ndarray,
                    config: Optional[GeometryConfig] = None) -> ActivationPartition:
    """One cell per activation pattern observed on ``data``; ids follow pattern order."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise InputError("no data points")
    pats = layer.patterns(data)
    observed = sorted({tuple(p) for p in pats.tolist()})
    ids = {p: i for i, p in enumerate(observed)}
    cells = [PartitionCell(i, layer.region(p), Predictor.affine(*layer.affine(p))) for p, i in ids.items()]
    index: Dict[int, List[int]] = {i: [] for i in ids.values()}
    for k, p in enumerate(pats.tolist()):
        index[ids[tuple(p)]].append(k)
    part = Partition(domain, cells, index, config)
    _check_interior(part, "activation cell")
    return ActivationPartition(part, {i: p for p, i in ids.items()}, layer)


def preimage(A_t: np.ndarray, c_t: np.ndarray, W_a: np.ndarray, b_a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """``{x : A_t (W_a x + b_a) <= c_t}`` as ``(A, c)``."""
    return A_t @ W_a, c_t - A_t @ b_a


def _has_interior(A: np.ndarray, c: np.ndarray, tol: float) -> bool:
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 1e-14
    if np.any(~keep & (c < -tol)):
        return False
    _, r = pt.chebyshev(A[keep] / norms[keep, None], c[keep] / norms[keep])
    return r > tol


@dataclass
class RefinedLayer:
    """Cells ``Q_{alpha,beta}`` of one layer and the induced vertex map."""

    partition: Partition
    pairs: Dict[int, Tuple[int, int]]
    vertex_map: Dict[int, int]
    complex: SimplicialComplex
    target_complex: SimplicialComplex
    repairs: List[Simplex] = field(default_factory=list)


def _refined_cell_halfspaces(prev: ActivationPartition, alpha: int, next_: Partition, beta: int):
    W_a, b_a = prev.layer.affine(prev.patterns[alpha])
    A_s, c_s = prev.partition.cell(alpha).geometry.halfspaces(prev.partition.domain)
    A_t, c_t = next_.cell(beta).geometry.halfspaces(next_.domain)
    A_p, c_p = preimage(A_t, c_t, W_a, b_a)
    return np.vstack([A_s, A_p]), np.concatenate([c_s, c_p])


def verify_simplicial_map(source: SimplicialComplex, target: SimplicialComplex, vmap: Dict[int, int],
                          target_partition: Optional[Partition] = None, slack: float = 1.0) -> List[Simplex]:
    """Check that every source simplex maps onto a target simplex.

    A missing image is re-tested geometrically with tolerance scaled by
    ``slack``; contacts found that way are returned as repairs. Anything
    else raises :class:`InvariantError`.
    """
    repairs = []
    for p in range(1, source.dim + 1):
        for s in source.simplices(p):
            img = tuple(sorted({vmap[v] for v in s}))
            if len(img) == 1 or img in target:
                continue
            if target_partition is not None:
                A, c = pt.stack([target_partition.cell(b).geometry.halfspaces(target_partition.domain) for b in img])
                if pt.feasible(A, c, target_partition.config.tol * slack):
                    repairs.append(img)
                    continue
            raise InvariantError(f"simplex {s} maps to {img}, which is not a simplex of the target nerve")
    return repairs


def refine_layer(prev: ActivationPartition, layer: Optional[LayerSpec], next_: Partition,
                 keep: Optional[Sequence[Tuple[int, int]]] = None, max_dim: int = 3,
                 next_complex: Optional[SimplicialComplex] = None) -> RefinedLayer:
    """Refine ``prev`` by preimages of the cells of ``next_`` under the layer.

    Args:
        prev: Activation regions of the layer on its input space.
        layer: The layer; defaults to ``prev.layer``.
        next_: Partition of the layer's output space.
        keep: Optional ``(alpha, beta)`` pairs to retain; all pairs with
            nonempty interior otherwise.
    """
    layer = layer or prev.layer
    if layer != prev.layer:
        raise InputError("layer differs from the one that produced the activation cells")
    if layer.out_dim != next_.n:
        raise InputError("layer output width differs from the target dimension")
    tol = prev.partition.config.tol
    pairs = sorted(keep) if keep is not None else [(a, b) for a in prev.partition.ids for b in next_.ids]
    cells, pair_of = [], {}
    for a, b in pairs:
        A, c = _refined_cell_halfspaces(prev, a, next_, b)
        if not _has_interior(A, c, tol):
            if keep is not None:
                raise InvariantError(f"refined cell {(a, b)} has empty interior")
            continue
        i = len(cells)
        W_a, b_a = layer.affine(prev.patterns[a])
        # HPolytope.halfspaces appends the domain rows itself
        geo = _strip_domain(A, c, prev.partition)
        cells.append(PartitionCell(i, geo, Predictor.affine(W_a, b_a)))
        pair_of[i] = (a, b)
    if not cells:
        raise InvariantError("refinement produced no cells")
    part = Partition(prev.partition.domain, cells, None, prev.partition.config)
    K, _ = build_nerve(part, max_dim, with_faces=False)
    if next_complex is None:
        next_complex, _ = build_nerve(next_, max_dim, with_faces=False)
    vmap = {q: pair_of[q][1] for q in pair_of}
    slack = 10.0 * (1.0 + float(np.linalg.norm(layer.Wm, 2)))
    repairs = verify_simplicial_map(K, next_complex, vmap, next_, slack)
    if repairs:
        next_complex = SimplicialComplex(next_complex.all_simplices() + repairs)
    return RefinedLayer(part, pair_of, vmap, K, next_complex, repairs)


def _strip_domain(A: np.ndarray, c: np.ndarray, part: Partition) -> HPolytope:
    """HPolytope from ``A x <= c`` without the rows equal to the domain box."""
    A_d, c_d = part.domain.halfspaces()
    rows = []
    for i in range(len(A)):
        dup = np.any(np.all(np.isclose(A_d, A[i], rtol=0, atol=0), axis=1) & (c_d == c[i]))
        if not dup:
            rows.append(i)
    return HPolytope.from_arrays(A[rows].reshape(-1, A.shape[1]), -c[rows])


@dataclass
class PullbackVolume:
    """Measure of ``rho(Q)`` as ``|det W_alpha| vol(Q)``.

    ``method`` is ``"exact"`` for square invertible ``W_alpha``,
    ``"singular"`` when the image collapses (value 0) and ``"non-square"``
    when input and output widths differ (value ``None``).
    """

    value: Optional[float]
    source_volume: float
    det: Optional[float]
    method: str
    stderr: float = 0.0


def pullback_volume(source: HPolytope, pattern: Pattern, target, layer: LayerSpec,
                    source_domain: Domain, target_domain: Domain,
                    config: Optional[GeometryConfig] = None) -> PullbackVolume:
    """Pull back the volume form of ``target`` through the layer on the cell ``source``."""
    cfg = config or GeometryConfig()
    W_a, b_a = layer.affine(pattern)
    A_s, c_s = source.halfspaces(source_domain)
    A_t, c_t = target.halfspaces(target_domain)
    A_p, c_p = preimage(A_t, c_t, W_a, b_a)
    A, c = np.vstack([A_s, A_p]), np.concatenate([c_s, c_p])
    seed = np.random.default_rng([cfg.seed, 991])
    f = pt.analyze(A, c, cfg.tol, cfg.mc_samples, seed)
    n = source_domain.ambient_dim
    vol = 0.0 if f.empty or f.dim < n else float(f.measure)
    err = 0.0 if f.empty or f.dim < n else float(f.stderr)
    if W_a.shape[0] != W_a.shape[1]:
        return PullbackVolume(None, vol, None, "non-square", err)
    det = float(np.linalg.det(W_a))
    if abs(det) <= 1e-12 * max(1.0, float(np.abs(W_a).max()) ** n):
        return PullbackVolume(0.0, vol, 0.0, "singular", err)
    return PullbackVolume(abs(det) * vol, vol, det, "exact", abs(det) * err)


@dataclass
class Level:
    """Data-witnessed partition of one layer's input space induced by the later layers."""

    partition: Partition
    complex: SimplicialComplex
    signatures: Dict[int, Tuple[Pattern, ...]]
    vertex_map: Dict[int, int]
    refined: Optional[RefinedLayer] = None


@dataclass
class LayerSequence:
    """Nerves ``K^(0) -> ... -> K^(L)`` with verified vertex maps."""

    layers: List[LayerSpec]
    domains: List[Domain]
    levels: List[Level]
    images: List[np.ndarray]
    patterns: List[np.ndarray]
    activation: List[ActivationPartition]
    report: Dict[str, object] = field(default_factory=dict)

    def signature(self, i: int, level: int = 0) -> Tuple[Pattern, ...]:
        """Forward-pass patterns of layers ``level+1..L`` at data point ``i``."""
        return tuple(tuple(int(b) for b in self.patterns[k][i]) for k in range(level, len(self.layers)))


def forward(layers: Sequence[LayerSpec], data: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Layer images ``h_0..h_L`` and activation patterns of layers ``1..L``."""
    h = [np.atleast_2d(np.asarray(data, dtype=float))]
    pats = []
    for layer in layers:
        pats.append(layer.patterns(h[-1]))
        h.append(layer(h[-1]))
    return h, pats


def backward_sequence(layers: Sequence[LayerSpec], domain: Optional[Domain], data: np.ndarray,
                      max_dim: int = 3, config: Optional[GeometryConfig] = None,
                      hidden_mc_samples: int = 20_000) -> LayerSequence:
    """Build the data-witnessed nerve sequence from the last layer back to the input."""
    if not layers:
        raise InputError("network has no layers")
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise InputError("no data points")
    domain = domain or auto_domain(data)
    if data.shape[1] != domain.ambient_dim:
        raise InputError("data dimension differs from the domain")
    lo, hi = domain.array[:, 0], domain.array[:, 1]
    if np.any(data < lo - 1e-12) or np.any(data > hi + 1e-12):
        raise InputError("data points lie outside the domain")
    for a, b in zip(layers, layers[1:]):
        if a.out_dim != b.in_dim:
            raise InputError("consecutive layer widths do not match")
    cfg = config or GeometryConfig()
    L = len(layers)
    domains = [domain]
    for layer in layers:
        domains.append(image_domain(layer, domains[-1]))
    h, pats = forward(layers, data)
    cfgs = [cfg] + [GeometryConfig(cfg.tol, min(cfg.mc_samples, hidden_mc_samples), cfg.seed) for _ in range(L)]
    act = [layer_partition(layers[l], domains[l], h[l], cfgs[l]) for l in range(L)]
    top = Partition(domains[L], [PartitionCell(0, Box(domains[L].bounds))], {0: list(range(len(data)))}, cfgs[L])
    top_complex = SimplicialComplex([(0,)])
    levels: List[Optional[Level]] = [None] * (L + 1)
    levels[L] = Level(top, top_complex, {0: ()}, {})
    sig_next = {i: 0 for i in range(len(data))}
    for l in range(L - 1, -1, -1):
        ap = act[l]
        pid = {p: i for i, p in ap.patterns.items()}
        point_pair = {i: (pid[tuple(pats[l][i].tolist())], sig_next[i]) for i in range(len(data))}
        keep = sorted(set(point_pair.values()))
        ref = refine_layer(ap, ap.layer, levels[l + 1].partition, keep, max_dim, levels[l + 1].complex)
        levels[l + 1].complex = ref.target_complex
        inv = {pair: q for q, pair in ref.pairs.items()}
        index: Dict[int, List[int]] = {q: [] for q in ref.pairs}
        for i, pair in point_pair.items():
            index[inv[pair]].append(i)
        part = Partition(domains[l], ref.partition.cells, index, cfgs[l])
        nxt_sig = levels[l + 1].signatures
        sigs = {q: (ap.patterns[a],) + nxt_sig[b] for q, (a, b) in ref.pairs.items()}
        levels[l] = Level(part, ref.complex, sigs, ref.vertex_map, ref)
        sig_next = {i: inv[point_pair[i]] for i in range(len(data))}
    seq = LayerSequence(list(layers), domains, levels, h, pats, act)
    seq.report = distortion_report(seq)
    return seq


def composed_affine(seq: LayerSequence, q: int) -> Tuple[np.ndarray, np.ndarray]:
    """Full-network affine map on input cell ``q``."""
    W = np.eye(seq.domains[0].ambient_dim)
    b = np.zeros(seq.domains[0].ambient_dim)
    for layer, pat in zip(seq.layers, seq.levels[0].signatures[q]):
        Wa, ba = layer.affine(pat)
        W, b = Wa @ W, Wa @ b + ba
    return W, b


def composed_pullback(seq: LayerSequence, q: int) -> PullbackVolume:
    """``|det J| vol(Q)`` for the composed Jacobian ``J`` of input cell ``q``."""
    part = seq.levels[0].partition
    vol = part.cell_volume(q)
    J, _ = composed_affine(seq, q)
    if J.shape[0] != J.shape[1]:
        return PullbackVolume(None, vol, None, "non-square")
    det = float(np.linalg.det(J))
    if abs(det) <= 1e-12:
        return PullbackVolume(0.0, vol, 0.0, "singular")
    return PullbackVolume(abs(det) * vol, vol, det, "exact")


def distortion_report(seq: LayerSequence) -> Dict[str, object]:
    """Cell counts, volume summaries and fibre sizes of every vertex map."""
    out = []
    for l, lev in enumerate(seq.levels):
        entry: Dict[str, object] = {
            "level": l,
            "dim": seq.domains[l].ambient_dim,
            "cells": len(lev.partition.ids),
            "f_vector": lev.complex.f_vector(),
        }
        if l < len(seq.layers):
            fib: Dict[int, int] = {}
            for q, b in lev.vertex_map.items():
                fib[b] = fib.get(b, 0) + 1
            entry["fibre_sizes"] = [fib[b] for b in sorted(fib)]
            entry["repairs"] = [list(s) for s in (lev.refined.repairs if lev.refined else [])]
        if l == 0:
            vols = [lev.partition.cell_volume(q) for q in lev.partition.ids]
            counts, edges = np.histogram(vols, bins=min(10, len(vols)))
            entry["volumes"] = vols
            entry["volume_histogram"] = {"counts": counts.tolist(), "edges": edges.tolist()}
        out.append(entry)
    return {"levels": out, "adjacency": "data-witnessed cells, exact intersection tests"}


def enriched_complex(seq: LayerSequence, max_dim: int = 3):
    """Input-level nerve, its metric and the full-network affine map per cell."""
    lev = seq.levels[0]
    part = lev.partition
    K, _ = build_nerve(part, max_dim)
    structure = RiemannianStructure(part, K, max_dim)
    maps = {q: composed_affine(seq, q) for q in part.ids}
    return K, structure, maps


def locate_chain(seq: LayerSequence, i: int) -> List[int]:
    """Cells containing data point ``i`` at each level, found geometrically."""
    out = []
    for l, lev in enumerate(seq.levels):
        x = seq.images[l][i:i + 1]
        out.append(int(lev.partition.locate(x)[0]))
    return out


def lemma_check(ref: RefinedLayer, prev: ActivationPartition, next_: Partition,
                n_samples: int = 20_000, seed: int = 0) -> Dict[str, object]:
    """Monte Carlo check that refined cells tile ``{x in prev : rho(x) in next}``."""
    rng = np.random.default_rng(seed)
    part = ref.partition
    x = part.domain.sample(n_samples, rng)
    tol = part.config.tol
    band = 1e-7
    y = prev.layer(x)
    in_src = np.zeros(n_samples, dtype=bool)
    for c in prev.partition.ids:
        in_src |= prev.partition.contains(c, x, -band)
    in_tgt = np.zeros(n_samples, dtype=bool)
    for c in next_.ids:
        in_tgt |= next_.contains(c, y, -band)
    region = in_src & in_tgt
    inner = np.zeros(n_samples, dtype=int)
    closed = np.zeros(n_samples, dtype=int)
    for q in part.ids:
        inner += part.contains(q, x, -band)
        closed += part.contains(q, x, band)
    uncovered = int(np.sum(region & (closed == 0)))
    overlapping = int(np.sum(inner > 1))
    return {"samples": n_samples, "region": int(region.sum()), "uncovered": uncovered,
            "overlapping": overlapping, "ok": uncovered == 0 and overlapping == 0, "tol": tol}
