"""Riemannian structure on a nerve: per-star Gram matrices of chains.

Vertices carry cell volumes, edges at a vertex carry facet measures and
interior dihedral angles, and higher chains use Gram determinants of the
next-level inner products.
"""

from __future__ import annotations

import math
import threading
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import polytope as pt
from .complex import Simplex, SimplicialComplex, permutation_sign, simplex
from .errors import EmbeddingError, InputError
from .partition import Face, Partition, build_nerve

SINGULAR_RTOL = 1e-12


class RiemannianStructure:
    """Compatible family of inner products on the chains of a nerve.

    Args:
        partition: The underlying partition.
        complex_: Its nerve; built with :func:`build_nerve` when omitted.
        max_dim: Nerve dimension cap used when building.
        ensemble: Optional provider of co-occurrence terms (see
            :mod:`nervegeom.ensemble`). It must expose ``lam(p)``,
            ``freq(v)`` and ``K(cells)``.
    """

    def __init__(self, partition: Partition, complex_: Optional[SimplicialComplex] = None,
                 max_dim: int = 3, ensemble=None):
        self.partition = partition
        if complex_ is None:
            complex_, _ = build_nerve(partition, max_dim=max_dim, with_faces=False)
        self.complex = complex_
        self.max_dim = max_dim
        self.n = partition.n
        self.ensemble = ensemble
        self.flags: Dict[Simplex, str] = {}
        self._level: Dict[Tuple, float] = {}
        self._grams: Dict[Tuple, Tuple[np.ndarray, List[Simplex]]] = {}
        self._lock = threading.Lock()

    def with_ensemble(self, ensemble) -> "RiemannianStructure":
        return RiemannianStructure(self.partition, self.complex, self.max_dim, ensemble=ensemble)

    def _check(self, s: Simplex) -> Simplex:
        s = tuple(s)
        if s not in self.complex:
            raise InputError(f"simplex {s} not in complex")
        return s

    def face(self, s: Simplex) -> Face:
        return self.partition.face(s)

    # -- level 0 ---------------------------------------------------------
    def vertex_volume(self, v: int) -> float:
        return self.partition.cell_volume(v)

    def vertex_inner(self, v: int) -> float:
        """Vertex self inner product: cell volume plus the ensemble term."""
        self._check((v,))
        val = self.partition.cell_volume(v)
        if self.ensemble is not None and self.ensemble.lam(0) != 0.0:
            val = val + self.ensemble.lam(0) * self.ensemble.freq(v)
        return val

    # -- level 1 ---------------------------------------------------------
    def facet_measure(self, e: Simplex) -> float:
        """Measure of the shared boundary of an edge, 0 if not a facet."""
        f = self.face(e)
        return f.measure if f.dim == self.n - 1 else 0.0

    def edge_geometric(self, base: int, e1: Simplex, e2: Simplex) -> float:
        e1, e2 = simplex(*e1), simplex(*e2)
        self._check(e1)
        self._check(e2)
        if base not in e1 or base not in e2:
            raise InputError(f"edges {e1}, {e2} are not incident to vertex {base}")
        f1, f2 = self.face(e1), self.face(e2)
        if f1.dim != self.n - 1 or f2.dim != self.n - 1:
            return 0.0
        if e1 == e2:
            return f1.measure
        parent = self.partition.cell_flat(base)
        cos = pt.interior_cos(parent, f1.carrier, f2.carrier, False)
        if cos == 0.0:
            return 0.0
        return math.sqrt(f1.measure * f2.measure) * cos

    def edge_inner(self, base: int, e1: Simplex, e2: Simplex) -> float:
        """Inner product of two edges in the star of ``base``."""
        val = self.edge_geometric(base, e1, e2)
        ens = self.ensemble
        if ens is not None and ens.lam(1) != 0.0:
            k1, k2 = ens.K(simplex(*e1)), ens.K(simplex(*e2))
            val = val + ens.lam(1) * math.sqrt(k1 * k2)
        return val

    def edge_length(self, e: Simplex) -> float:
        e = simplex(*e)
        return math.sqrt(max(self.edge_inner(e[0], e, e), 0.0))

    # -- level dim(sigma)+1 ----------------------------------------------
    def level_inner(self, sigma: Simplex, a: int, b: int, geometric_only: bool = False) -> float:
        """Inner product of ``sigma ^ a`` and ``sigma ^ b`` in the star of ``sigma``."""
        sigma = tuple(sigma)
        if len(sigma) == 1:
            e1, e2 = simplex(sigma[0], a), simplex(sigma[0], b)
            if geometric_only:
                return self.edge_geometric(sigma[0], e1, e2)
            return self.edge_inner(sigma[0], e1, e2)
        key = (sigma, min(a, b), max(a, b))
        with self._lock:
            if key in self._level:
                return self._level[key]
        val = self._level_geometric(sigma, a, b)
        with self._lock:
            self._level[key] = val
        return val

    def _level_geometric(self, sigma: Simplex, a: int, b: int) -> float:
        ra, rb = simplex(*sigma, a), simplex(*sigma, b)
        self._check(ra)
        self._check(rb)
        k = self.n - (len(sigma) - 1) - 1
        fa, fb = self.face(ra), self.face(rb)
        if fa.empty or fb.empty:
            return 0.0
        if k <= 0:
            if fa.dim > 0 or fb.dim > 0:
                self.flags[sigma] = "positive-dimensional face where a point was expected"
            return 1.0
        if fa.dim < k or fb.dim < k:
            return 0.0
        if a == b:
            return fa.measure
        fs = self.face(sigma)
        if fs.dim != k + 1:
            self.flags[sigma] = f"degenerate carrier: dim {fs.dim}, expected {k + 1}"
            return 0.0
        cos = pt.interior_cos(fs.carrier, fa.carrier, fb.carrier, False)
        if cos == 0.0:
            return 0.0
        return math.sqrt(fa.measure * fb.measure) * cos

    # -- higher chains -----------------------------------------------------
    def higher_inner(self, sigma: Simplex, rho1: Simplex, rho2: Simplex) -> float:
        """Gram-determinant inner product of two p-simplices containing ``sigma``.

        Both simplices are taken with their canonical (ascending) orientation.
        """
        sigma, rho1, rho2 = simplex(*sigma), simplex(*rho1), simplex(*rho2)
        if len(rho1) != len(rho2):
            raise InputError("higher_inner needs simplices of equal dimension")
        if not set(sigma) <= set(rho1) or not set(sigma) <= set(rho2):
            raise InputError(f"{rho1} and {rho2} must contain {sigma}")
        self._check(sigma)
        self._check(rho1)
        self._check(rho2)
        if len(rho1) == len(sigma):
            if len(sigma) == 1:
                return self.vertex_inner(sigma[0])
            return self.self_inner(sigma)
        ex1 = [v for v in rho1 if v not in sigma]
        ex2 = [v for v in rho2 if v not in sigma]
        sign = permutation_sign(sigma + tuple(ex1)) * permutation_sign(sigma + tuple(ex2))
        ens = self.ensemble
        p = len(rho1) - 1
        plain_edges = p == 1
        G = np.array([[self.level_inner(sigma, a, b, geometric_only=not plain_edges) for b in ex2] for a in ex1])
        val = sign * _det(G)
        if ens is not None and p >= 2 and ens.lam(p) != 0.0:
            Km = np.array([[ens.K(simplex(*set(sigma + (a, b)))) for b in ex2] for a in ex1])
            val = val + sign * ens.lam(p) * _det(Km)
        return float(val) + 0.0

    def self_inner(self, rho: Simplex) -> float:
        """``<rho, rho>`` averaged over the stars of its vertices."""
        rho = simplex(*rho)
        if len(rho) == 1:
            return self.vertex_inner(rho[0])
        vals = [self.higher_inner((v,), rho, rho) for v in rho]
        return float(np.mean(vals))

    def star_simplices(self, sigma: Simplex, p: int) -> List[Simplex]:
        sigma = self._check(simplex(*sigma))
        if p == len(sigma) - 1:
            return [sigma]
        return sorted(self.complex.cofaces(sigma, p))

    def star_gram(self, sigma: Simplex, p: int) -> Tuple[np.ndarray, List[Simplex]]:
        """Gram matrix of the p-simplices of the star of ``sigma`` containing it."""
        sigma = self._check(simplex(*sigma))
        if p < len(sigma) - 1:
            raise InputError("p must be at least dim(sigma)")
        key = (sigma, p)
        with self._lock:
            if key in self._grams:
                G, order = self._grams[key]
                return G.copy(), list(order)
        order = self.star_simplices(sigma, p)
        m = len(order)
        G = np.zeros((m, m))
        for i in range(m):
            for j in range(i, m):
                G[i, j] = G[j, i] = self.higher_inner(sigma, order[i], order[j])
        with self._lock:
            self._grams[key] = (G, order)
        return G.copy(), list(order)

    def gram_condition(self, v: int) -> float:
        """Condition number of the vertex Gram over edges with a facet.

        Edges carried only by lower-dimensional contact have zero rows
        under the zero convention and are left out. Returns ``inf`` when
        the remaining matrix is singular.
        """
        G, _ = self.star_gram((v,), 1)
        if G.size == 0:
            raise InputError(f"vertex {v} has an empty star")
        keep = np.diag(G) > 0
        G = G[np.ix_(keep, keep)]
        if G.size == 0:
            return math.inf
        off = G - np.diag(np.diag(G))
        if not np.any(off):
            ev = np.diag(G)
        else:
            ev = np.linalg.eigvalsh(G)
        lo, hi = float(np.min(ev)), float(np.max(ev))
        if hi <= 0 or lo < SINGULAR_RTOL * hi:
            return math.inf
        return hi / lo

    def is_singular(self, v: int) -> bool:
        return math.isinf(self.gram_condition(v))

    def weight_matrix(self, p: int) -> np.ndarray:
        """Global inner product on p-cochains assembled from star Grams.

        ``W_0`` is diagonal with vertex inner products. For ``p >= 1`` each
        vertex star Gram is projected onto the PSD cone, embedded, summed
        and divided by ``p + 1`` (the number of stars containing a
        p-simplex), so the diagonal is the star-averaged self product.
        """
        simp = self.complex.simplices(p)
        m = len(simp)
        if p == 0:
            return np.diag([self.vertex_inner(v[0]) for v in simp])
        W = np.zeros((m, m))
        idx = {s: i for i, s in enumerate(simp)}
        for v in self.complex.vertices:
            G, order = self.star_gram((v,), p)
            if not order:
                continue
            G = psd_part(G)
            ii = [idx[s] for s in order]
            W[np.ix_(ii, ii)] += G
        W /= p + 1
        return (W + W.T) / 2.0

    def consistency_report(self, tol: float = 1e-9) -> Dict[str, object]:
        """Agreement of self inner products across the stars that contain them."""
        worst_edge = 0.0
        for e in self.complex.simplices(1):
            a = self.edge_inner(e[0], e, e)
            b = self.edge_inner(e[1], e, e)
            worst_edge = max(worst_edge, abs(a - b))
        worst_higher = 0.0
        for p in range(2, self.complex.dim + 1):
            for rho in self.complex.simplices(p):
                vals = [self.higher_inner((v,), rho, rho) for v in rho]
                worst_higher = max(worst_higher, max(vals) - min(vals))
        return {
            "edge_max_discrepancy": worst_edge,
            "edge_consistent": worst_edge <= tol,
            "higher_max_discrepancy": worst_higher,
            "higher_consistent": worst_higher <= tol,
            "degenerate_carriers": {",".join(map(str, k)): v for k, v in sorted(self.flags.items())},
        }


def _det(G: np.ndarray) -> float:
    if G.shape == (1, 1):
        return float(G[0, 0])
    if G.shape == (2, 2):
        return float(G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0])
    return float(np.linalg.det(G))


def psd_part(G: np.ndarray) -> np.ndarray:
    """Projection of a symmetric matrix onto the PSD cone (exact if diagonal)."""
    G = (G + G.T) / 2.0
    if not np.any(G - np.diag(np.diag(G))):
        return np.diag(np.maximum(np.diag(G), 0.0))
    w, V = np.linalg.eigh(G)
    if w.min() >= 0:
        return G
    return (V * np.maximum(w, 0.0)) @ V.T


def simplex_volume_cayley_menger(lengths, rtol: float = 1e-10) -> float:
    """Volume of a simplex from its pairwise edge lengths.

    Args:
        lengths: ``(p+1) x (p+1)`` symmetric matrix with zero diagonal.
        rtol: Relative tolerance on the sign of the squared volume.

    Returns:
        The p-dimensional volume.

    Raises:
        EmbeddingError: if the lengths cannot be realised in Euclidean space.
    """
    L = np.asarray(lengths, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise InputError("length matrix must be square")
    if np.any(L < 0) or not np.allclose(L, L.T) or np.any(np.diag(L) != 0):
        raise InputError("length matrix must be symmetric, nonnegative, zero diagonal")
    p = L.shape[0] - 1
    if p == 0:
        return 1.0
    if p == 1:
        return float(L[0, 1])
    cm = np.ones((p + 2, p + 2))
    cm[0, 0] = 0.0
    cm[1:, 1:] = L**2
    det = np.linalg.det(cm)
    vol2 = (-1) ** (p + 1) * det / (2**p * math.factorial(p) ** 2)
    scale = float(L.max()) ** (2 * p) if L.size else 1.0
    if vol2 < -rtol * max(scale, 1e-300):
        raise EmbeddingError(
            f"Cayley-Menger determinant has the wrong sign (det={det:.6g}) for a {p}-simplex; "
            "lengths are not Euclidean"
        )
    return math.sqrt(max(vol2, 0.0))
