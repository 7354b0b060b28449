"""Discrete calculus on the weighted nerve.

Conventions:
    * ``D_p`` is the coboundary matrix from p- to (p+1)-cochains.
    * ``W_p`` is the metric inner product on p-cochains
      (:meth:`RiemannianStructure.weight_matrix`).
    * Operators are assembled in W-orthonormal coordinates: with
      ``W_p = S_p S_p^T`` the weighted coboundary is
      ``S_{p+1}^T D_p S_p^{+T}`` and the Hodge Laplacian there is
      symmetric positive semidefinite by construction.
    * The *energy matrix* ``E_p^{(k)} = S_p Lt_p^k S_p^T`` satisfies
      ``<x, L_p^k x>_{W_p} = x^T E_p^{(k)} x``; for ``p = 0`` the graph
      Laplacian ``D - A`` plays the role of ``E_0^{(1)}``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .complex import Cochain
from .errors import InputError, InvariantError
from .metric import RiemannianStructure, simplex_volume_cayley_menger

ZERO_EIG = 1e-10
RANK_RTOL = 1e-12


def graph_laplacian(structure: RiemannianStructure) -> np.ndarray:
    """``D - A`` with ``A_ij`` the edge self inner product (facet measure plus ensemble term)."""
    verts = structure.complex.vertices
    idx = {v: i for i, v in enumerate(verts)}
    A = np.zeros((len(verts), len(verts)))
    for e in structure.complex.simplices(1):
        w = structure.edge_inner(e[0], e, e)
        A[idx[e[0]], idx[e[1]]] = A[idx[e[1]], idx[e[0]]] = w
    return np.diag(A.sum(axis=1)) - A


def _factor(W: np.ndarray):
    """Return ``S`` with ``W = S S^T`` on the range of W and its pseudo-inverse transpose."""
    W = (W + W.T) / 2.0
    if W.size == 0:
        return np.zeros((0, 0)), np.zeros((0, 0))
    if not np.any(W - np.diag(np.diag(W))):
        d = np.diag(W)
        keep = d > RANK_RTOL * max(d.max(), 1e-300)
        S = np.zeros((len(d), int(keep.sum())))
        Sp = np.zeros_like(S)
        cols = np.flatnonzero(keep)
        S[cols, np.arange(len(cols))] = np.sqrt(d[cols])
        Sp[cols, np.arange(len(cols))] = 1.0 / np.sqrt(d[cols])
        return S, Sp
    w, U = np.linalg.eigh(W)
    keep = w > RANK_RTOL * max(w.max(), 1e-300)
    U, w = U[:, keep], w[keep]
    return U * np.sqrt(w), U / np.sqrt(w)


@dataclass
class HodgeOperators:
    """Coboundaries, metric weights and Hodge Laplacians up to ``top``.

    Attributes:
        coboundary: ``D_p`` dense matrices.
        weights: ``W_p`` matrices.
        laplacians: ``Lt_p`` in W-orthonormal coordinates (symmetric PSD).
        graph: ``D - A`` used in degree 0.
    """

    top: int
    coboundary: Dict[int, np.ndarray]
    weights: Dict[int, np.ndarray]
    factors: Dict[int, Tuple[np.ndarray, np.ndarray]]
    laplacians: Dict[int, np.ndarray]
    graph: np.ndarray
    _energy: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict, repr=False)

    def energy(self, p: int, k: int = 1) -> np.ndarray:
        """``E_p^{(k)}``: quadratic form of ``<x, L_p^k x>_{W_p}``."""
        if k < 1:
            raise InputError("Laplacian power k must be >= 1")
        key = (p, k)
        if key not in self._energy:
            if p == 0:
                w = np.diag(self.weights[0])
                if k == 1:
                    E = self.graph.copy()
                else:
                    r = 1.0 / np.sqrt(w)
                    Lt = r[:, None] * self.graph * r[None, :]
                    E = np.sqrt(w)[:, None] * np.linalg.matrix_power(Lt, k) * np.sqrt(w)[None, :]
            else:
                S, _ = self.factors[p]
                E = S @ np.linalg.matrix_power(self.laplacians[p], k) @ S.T
            self._energy[key] = (E + E.T) / 2.0
        return self._energy[key]

    def operator(self, p: int) -> np.ndarray:
        """``L_p`` acting on p-cochains in the canonical basis (W-self-adjoint)."""
        if p == 0:
            return self.graph / np.diag(self.weights[0])[:, None]
        S, Sp = self.factors[p]
        return Sp @ self.laplacians[p] @ S.T


def hodge_operators(structure: RiemannianStructure, top: Optional[int] = None) -> HodgeOperators:
    """Assemble coboundaries, weights and Laplacians for degrees ``0..top``."""
    cx = structure.complex
    top = cx.dim if top is None else min(top, cx.dim)
    cob = {p: cx.coboundary_matrix(p).toarray() for p in range(0, cx.dim)}
    W = {p: structure.weight_matrix(p) for p in range(0, min(top + 1, cx.dim) + 1)}
    factors = {p: _factor(W[p]) for p in W}
    d_tilde: Dict[int, np.ndarray] = {}
    for p in range(0, min(top, cx.dim - 1) + 1):
        S_next, _ = factors[p + 1]
        _, Sp = factors[p]
        d_tilde[p] = S_next.T @ cob[p] @ Sp
    laps: Dict[int, np.ndarray] = {}
    for p in range(0, top + 1):
        r = factors[p][0].shape[1]
        L = np.zeros((r, r))
        if p - 1 in d_tilde:
            L += d_tilde[p - 1] @ d_tilde[p - 1].T
        if p in d_tilde:
            L += d_tilde[p].T @ d_tilde[p]
        laps[p] = (L + L.T) / 2.0
    return HodgeOperators(top, cob, W, factors, laps, graph_laplacian(structure))


def simplex_volumes(structure: RiemannianStructure, p: int) -> np.ndarray:
    """``vol_p`` of every p-simplex from Cayley-Menger over edge lengths."""
    simp = structure.complex.simplices(p)
    if p == 0:
        return np.ones(len(simp))
    out = np.empty(len(simp))
    for i, s in enumerate(simp):
        L = np.zeros((len(s), len(s)))
        for a in range(len(s)):
            for b in range(a + 1, len(s)):
                L[a, b] = L[b, a] = structure.edge_length((s[a], s[b]))
        out[i] = simplex_volume_cayley_menger(L)
    return out


def lift_matrix(structure: RiemannianStructure, p: int) -> np.ndarray:
    """Matrix of the barycentric lift ``kappa_p`` (rows p-simplices, columns vertices)."""
    cx = structure.complex
    if p > cx.dim:
        raise InputError(f"complex has no {p}-simplices")
    verts = cx.vertices
    idx = {v: i for i, v in enumerate(verts)}
    vols = simplex_volumes(structure, p)
    K = np.zeros((cx.count(p), len(verts)))
    for r, s in enumerate(cx.simplices(p)):
        for v in s:
            K[r, idx[v]] = vols[r] / (p + 1)
    return K


def barycentric_lift(values: Sequence[float], lengths) -> float:
    """Lift of vertex values to a single simplex given its edge-length matrix."""
    values = np.asarray(values, dtype=float)
    vol = simplex_volume_cayley_menger(lengths)
    return vol * float(values.mean())


def whitney_lift(u: Mapping[int, float] | Sequence[float], p: int, structure: RiemannianStructure) -> Cochain:
    """``kappa_p(u)(sigma) = vol_p(sigma)/(p+1) * sum of u over the vertices of sigma``."""
    uvec = _vertex_vector(u, structure)
    vals = lift_matrix(structure, p) @ uvec
    return Cochain.from_vector(structure.complex, p, vals)


def _vertex_vector(u, structure: RiemannianStructure) -> np.ndarray:
    verts = structure.complex.vertices
    if isinstance(u, Mapping):
        missing = [v for v in verts if v not in u]
        if missing:
            raise InputError(f"vertex function missing values at {missing}")
        return np.array([float(u[v]) for v in verts])
    arr = np.asarray(u, dtype=float)
    if arr.shape != (len(verts),):
        raise InputError("vertex function has the wrong length")
    return arr


def extended_laplacian_matrix(
    structure: RiemannianStructure,
    alphas: Mapping[int, float],
    ops: Optional[HodgeOperators] = None,
    vertex_weighted: bool = False,
) -> np.ndarray:
    """Matrix of ``L_0 + sum_p alpha_p kappa_p^* L_p kappa_p``.

    With ``vertex_weighted=False`` the adjoint of ``kappa_p`` is taken with
    respect to the plain vertex pairing, so the operator is symmetric and
    equals ``D - A`` when every alpha is zero. With ``vertex_weighted=True``
    the adjoint is ``W_0^{-1} kappa_p^T W_p`` and ``L_0 = W_0^{-1}(D - A)``;
    that operator is self-adjoint for the vertex-volume inner product.
    """
    if any(a < 0 for a in alphas.values()):
        raise InputError("alpha_p must be nonnegative")
    top = max([p for p, a in alphas.items() if a != 0.0], default=0)
    ops = ops or hodge_operators(structure, top=max(top, 1))
    M = ops.graph.copy()
    for p, a in sorted(alphas.items()):
        if p < 1 or a == 0.0:
            continue
        K = lift_matrix(structure, p)
        M += a * K.T @ ops.energy(p, 1) @ K
    if vertex_weighted:
        M = M / np.diag(ops.weights[0])[:, None]
    return M


def extended_laplacian_apply(u, alphas: Mapping[int, float], structure: RiemannianStructure,
                             vertex_weighted: bool = False) -> np.ndarray:
    return extended_laplacian_matrix(structure, alphas, vertex_weighted=vertex_weighted) @ _vertex_vector(u, structure)


@dataclass
class SplineProblem:
    """Observations and smoothness penalties ``(p, k, lambda_pk)``."""

    y: np.ndarray
    penalties: List[Tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        for p, k, lam in self.penalties:
            if lam < 0 or k < 1 or p < 0:
                raise InputError(f"invalid penalty {(p, k, lam)}")


@dataclass
class SplineResult:
    u: np.ndarray
    residual: float
    energy: float
    energy_at_y: float
    min_eigenvalue: float


def penalty_matrix(structure: RiemannianStructure, penalties, ops: Optional[HodgeOperators] = None) -> np.ndarray:
    """``sum lambda_pk kappa_p^T E_p^{(k)} kappa_p`` (symmetric PSD)."""
    nv = structure.complex.count(0)
    P = np.zeros((nv, nv))
    active = [(p, k, lam) for p, k, lam in penalties if lam != 0.0]
    if not active:
        return P
    top = max(p for p, _, _ in active)
    ops = ops or hodge_operators(structure, top=top)
    for p, k, lam in active:
        K = np.eye(nv) if p == 0 else lift_matrix(structure, p)
        P += lam * K.T @ ops.energy(p, k) @ K
    return (P + P.T) / 2.0


def spline_energy(u: np.ndarray, y: np.ndarray, P: np.ndarray) -> float:
    """``||y - u||^2 + u^T P u``."""
    r = y - u
    return float(r @ r + u @ P @ u)


def solve_simplicial_spline(problem: SplineProblem, structure: RiemannianStructure) -> SplineResult:
    """Minimize the spline energy by solving ``(I + P) u = y``.

    ``P`` is the penalty Hessian from :func:`penalty_matrix`; the normal
    equations follow from setting the gradient of the energy to zero.
    """
    y = problem.y
    nv = structure.complex.count(0)
    if y.shape != (nv,):
        raise InputError("observation vector length differs from vertex count")
    P = penalty_matrix(structure, problem.penalties)
    M = np.eye(nv) + P
    if not np.any(P):
        u = y.copy()
    else:
        u = np.linalg.solve(M, y)
    res = float(np.linalg.norm(M @ u - y))
    if res > 1e-8 * max(np.linalg.norm(y), 1e-300) and np.linalg.norm(y) > 0:
        raise InvariantError(f"spline residual {res:.3g} exceeds tolerance")
    min_eig = float(np.linalg.eigvalsh(M).min()) if nv else 1.0
    return SplineResult(u, res, spline_energy(u, y, P), spline_energy(y, y, P), min_eig)


def smallest_positive(eigs: np.ndarray, zero: float = ZERO_EIG) -> float:
    pos = eigs[eigs > zero]
    return float(pos.min()) if pos.size else 0.0


def laplacian_spectrum(ops: HodgeOperators) -> Dict[int, float]:
    """Spectral gap per degree: ``lambda_2`` of ``D - A`` and the smallest positive ``Lt_p`` eigenvalue."""
    out: Dict[int, float] = {}
    g = np.linalg.eigvalsh(ops.graph) if ops.graph.size else np.zeros(0)
    out[0] = float(np.sort(g)[1]) if g.size >= 2 else 0.0
    if abs(out[0]) <= ZERO_EIG:
        out[0] = 0.0
    for p in range(1, ops.top + 1):
        L = ops.laplacians.get(p)
        if L is None or L.size == 0:
            continue
        out[p] = smallest_positive(np.linalg.eigvalsh(L))
    return out


@dataclass
class SpectralSignature:
    ratios: List[Dict[int, float]]
    health: List[float]
    excluded: List[int]


def spectral_signature(gaps: Sequence[Mapping[int, float]], baseline: int = 0) -> SpectralSignature:
    """Ratios of spectral gaps to a baseline iteration and their minimum.

    Args:
        gaps: One mapping ``p -> gap`` per iteration (see :func:`laplacian_spectrum`).
        baseline: Index of the reference iteration.
    """
    if not gaps:
        raise InputError("no iterations recorded")
    base = gaps[baseline]
    included = sorted(p for p, g in base.items() if g > ZERO_EIG)
    excluded = sorted(p for p, g in base.items() if g <= ZERO_EIG)
    if excluded:
        warnings.warn(f"zero baseline gap in degrees {excluded}; excluded from the signature")
    ratios, health = [], []
    for g in gaps:
        r = {p: float(g.get(p, 0.0)) / base[p] for p in included}
        ratios.append(r)
        health.append(min(r.values()) if r else math.nan)
    return SpectralSignature(ratios, health, excluded)
