"""Geometry of convex polytopes given in H-representation ``A x <= c``.

The central routine :func:`analyze` determines whether a (possibly
lower-dimensional) polytope is empty, finds its affine hull, a relative
interior point and its intrinsic Lebesgue measure. Axis-aligned boxes have
an exact interval-arithmetic counterpart in :func:`box_flat`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection
from scipy.spatial import QhullError

from .errors import InvariantError

DEFAULT_TOL = 1e-9
DEFAULT_MC_SAMPLES = 10**6
EXACT_MAX_DIM = 3


@dataclass
class Flat:
    """A convex set together with its affine carrier.

    Attributes:
        empty: True when the set is empty (within tolerance).
        dim: Dimension of the affine hull, -1 when empty.
        measure: Intrinsic ``dim``-dimensional volume (1 for a point).
        stderr: Standard error of ``measure`` (0 for exact methods).
        point: A relative interior point.
        basis: ``n x dim`` orthonormal basis of the carrier directions.
        axis_dims: For boxes, the free coordinate indices; ``None`` otherwise.
        method: ``"exact"`` or ``"monte_carlo"``.
    """

    empty: bool
    dim: int
    measure: float
    stderr: float = 0.0
    point: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None
    axis_dims: Optional[Tuple[int, ...]] = None
    method: str = "exact"
    local_A: Optional[np.ndarray] = field(default=None, repr=False)
    local_c: Optional[np.ndarray] = field(default=None, repr=False)
    origin: Optional[np.ndarray] = field(default=None, repr=False)


EMPTY = Flat(empty=True, dim=-1, measure=0.0)


def box_halfspaces(bounds: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Halfspace form of an axis-aligned box given as ``(n, 2)`` bounds."""
    bounds = np.asarray(bounds, dtype=float)
    n = bounds.shape[0]
    eye = np.eye(n)
    A = np.vstack([eye, -eye])
    c = np.concatenate([bounds[:, 1], -bounds[:, 0]])
    return A, c


def box_flat(bounds: np.ndarray, tol: float = DEFAULT_TOL) -> Flat:
    """Exact analysis of a (possibly degenerate) axis-aligned box."""
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(lo > hi + tol):
        return EMPTY
    hi = np.maximum(hi, lo)
    free = tuple(int(d) for d in np.flatnonzero(hi - lo > tol))
    n = len(lo)
    measure = 1.0
    for d in free:
        measure *= float(hi[d] - lo[d])
    point = (lo + hi) / 2.0
    basis = np.zeros((n, len(free)))
    for j, d in enumerate(free):
        basis[d, j] = 1.0
    return Flat(False, len(free), measure, 0.0, point, basis, axis_dims=free, origin=point)


def _normalize(A: np.ndarray, c: np.ndarray, tol: float):
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 1e-14
    if np.any(~keep & (c < -tol)):
        return None
    return A[keep] / norms[keep, None], c[keep] / norms[keep]


def _lp(obj, A_ub, b_ub, bounds):
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    return res


def feasible(A: np.ndarray, c: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    """True when ``{x : A x <= c + tol}`` is nonempty."""
    norm = _normalize(np.asarray(A, float), np.asarray(c, float), tol)
    if norm is None:
        return False
    A, c = norm
    n = A.shape[1]
    res = _lp(np.zeros(n), A, c + tol, [(None, None)] * n)
    return res.status == 0


def chebyshev(A: np.ndarray, c: np.ndarray, cap: float = 1.0):
    """Chebyshev center and inradius of normalized ``A y <= c``.

    Returns ``(center, radius)``; radius is capped at ``cap`` so unbounded
    directions do not make the LP unbounded.
    """
    m, n = A.shape
    A_ub = np.hstack([A, np.ones((m, 1))])
    obj = np.zeros(n + 1)
    obj[-1] = -1.0
    res = _lp(obj, A_ub, c, [(None, None)] * n + [(None, cap)])
    if res.status != 0:
        return None, -np.inf
    return res.x[:n], float(res.x[-1])


def _implicit_equalities(A: np.ndarray, c: np.ndarray, tol: float):
    """Indices of rows that hold with equality on the whole (relaxed) set."""
    m, n = A.shape
    undecided = list(range(m))
    slack_rows: list[int] = []
    x_last = None
    thresh = 10.0 * tol
    while undecided:
        k = len(undecided)
        A_ub = np.zeros((m, n + k))
        A_ub[:, :n] = A
        for j, i in enumerate(undecided):
            A_ub[i, n + j] = 1.0
        obj = np.zeros(n + k)
        obj[n:] = -1.0
        res = _lp(obj, A_ub, c + tol, [(None, None)] * n + [(0.0, 1.0)] * k)
        if res.status != 0:
            raise InvariantError("equality-detection LP failed on a feasible polytope")
        x_last = res.x[:n]
        s = res.x[n:]
        newly = [i for j, i in enumerate(undecided) if s[j] > thresh]
        if not newly:
            break
        slack_rows.extend(newly)
        undecided = [i for i in undecided if i not in set(newly)]
    return sorted(undecided), x_last


def _null_space(M: np.ndarray, n: int, rtol: float = 1e-9):
    if M.size == 0:
        return np.eye(n), 0
    _, s, vt = np.linalg.svd(M)
    rank = int(np.sum(s > rtol * max(1.0, s[0])))
    return vt[rank:].T.copy(), rank


def _interval(A_loc: np.ndarray, c_loc: np.ndarray):
    lo, hi = -np.inf, np.inf
    for a, b in zip(A_loc[:, 0], c_loc):
        if a > 0:
            hi = min(hi, b / a)
        elif a < 0:
            lo = max(lo, b / a)
    return lo, hi


def _exact_volume(A_loc: np.ndarray, c_loc: np.ndarray, center: np.ndarray) -> Tuple[float, np.ndarray]:
    halfspaces = np.hstack([A_loc, -c_loc[:, None]])
    try:
        hs = HalfspaceIntersection(halfspaces, center)
        verts = hs.intersections
        hull = ConvexHull(verts)
    except QhullError:
        return 0.0, np.empty((0, A_loc.shape[1]))
    return float(hull.volume), verts[hull.vertices]


def _local_bounds(A_loc: np.ndarray, c_loc: np.ndarray):
    k = A_loc.shape[1]
    lo = np.empty(k)
    hi = np.empty(k)
    for d in range(k):
        e = np.zeros(k)
        e[d] = 1.0
        r1 = _lp(e, A_loc, c_loc, [(None, None)] * k)
        r2 = _lp(-e, A_loc, c_loc, [(None, None)] * k)
        if r1.status != 0 or r2.status != 0:
            raise InvariantError("polytope is unbounded; clip to the domain first")
        lo[d] = r1.x[d]
        hi[d] = r2.x[d]
    return lo, hi


def monte_carlo_volume(A_loc: np.ndarray, c_loc: np.ndarray, n_samples: int, rng: np.random.Generator):
    """Hit-or-miss volume estimate inside the LP bounding box."""
    lo, hi = _local_bounds(A_loc, c_loc)
    box = float(np.prod(hi - lo))
    if box <= 0.0:
        return 0.0, 0.0
    hits = 0
    remaining = n_samples
    chunk = 200_000
    while remaining > 0:
        m = min(chunk, remaining)
        y = lo + (hi - lo) * rng.random((m, len(lo)))
        hits += int(np.count_nonzero(np.all(y @ A_loc.T <= c_loc, axis=1)))
        remaining -= m
    p = hits / n_samples
    return box * p, box * np.sqrt(p * (1.0 - p) / n_samples)


def analyze(
    A: np.ndarray,
    c: np.ndarray,
    tol: float = DEFAULT_TOL,
    n_samples: int = DEFAULT_MC_SAMPLES,
    rng: Optional[np.random.Generator] = None,
    with_measure: bool = True,
) -> Flat:
    """Analyze the bounded polytope ``{x : A x <= c}``.

    Emptiness and implicit equalities are decided with a slack ``tol`` so
    that closures of neighbouring cells meet along their shared boundary.
    Measures are exact for carriers of dimension at most three and Monte
    Carlo estimates above that.
    """
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    n = A.shape[1]
    norm = _normalize(A, c, tol)
    if norm is None:
        return EMPTY
    A, c = norm
    center, radius = chebyshev(A, c)
    if center is None or radius < -tol:
        return EMPTY
    if radius > tol:
        eq: list[int] = []
        x0 = center
        basis = np.eye(n)
    else:
        eq, x_feas = _implicit_equalities(A, c, tol)
        A_E, c_E = A[eq], c[eq]
        basis, _ = _null_space(A_E, n)
        x0 = x_feas - np.linalg.pinv(A_E) @ (A_E @ x_feas - c_E) if eq else x_feas
    k = basis.shape[1]
    rest = [i for i in range(A.shape[0]) if i not in set(eq)]
    A_loc = A[rest] @ basis
    c_loc = c[rest] - A[rest] @ x0
    rn = np.linalg.norm(A_loc, axis=1)
    keep = rn > 1e-12
    A_loc = A_loc[keep] / rn[keep, None]
    c_loc = c_loc[keep] / rn[keep]

    if k == 0:
        return Flat(False, 0, 1.0, 0.0, x0, basis, method="exact", local_A=A_loc, local_c=c_loc, origin=x0)
    if k == 1:
        lo, hi = _interval(A_loc, c_loc)
        if not np.isfinite(lo) or not np.isfinite(hi):
            raise InvariantError("unbounded one-dimensional face")
        point = x0 + basis[:, 0] * (lo + hi) / 2.0
        return Flat(False, 1, max(0.0, hi - lo), 0.0, point, basis, local_A=A_loc, local_c=c_loc, origin=x0)
    if radius > tol:
        y_c = np.zeros(k)
    else:
        y_c, r_loc = chebyshev(A_loc, c_loc)
        if y_c is None:
            raise InvariantError("relative interior point not found")
    point = x0 + basis @ y_c
    if not with_measure:
        return Flat(False, k, float("nan"), 0.0, point, basis, local_A=A_loc, local_c=c_loc, origin=x0)
    if k <= EXACT_MAX_DIM:
        # shift so the Chebyshev center is the origin for qhull
        vol, _ = _exact_volume(A_loc, c_loc - A_loc @ y_c, np.zeros(k))
        return Flat(False, k, vol, 0.0, point, basis, local_A=A_loc, local_c=c_loc, origin=x0)
    rng = rng if rng is not None else np.random.default_rng(0)
    vol, se = monte_carlo_volume(A_loc, c_loc, n_samples, rng)
    return Flat(False, k, vol, se, point, basis, method="monte_carlo", local_A=A_loc, local_c=c_loc, origin=x0)


def polytope_vertices(flat: Flat) -> np.ndarray:
    """Vertices (ambient coordinates) of a nonempty flat of dim <= 3."""
    if flat.empty:
        return np.empty((0, 0))
    if flat.dim == 0:
        return flat.point[None, :]
    if flat.axis_dims is not None:
        raise ValueError("use box corners for boxes")
    if flat.dim == 1:
        lo, hi = _interval(flat.local_A, flat.local_c)
        return np.array([flat.origin + flat.basis[:, 0] * lo, flat.origin + flat.basis[:, 0] * hi])
    y_c = flat.basis.T @ (flat.point - flat.origin)
    _, verts = _exact_volume(flat.local_A, flat.local_c - flat.local_A @ y_c, np.zeros(flat.dim))
    return flat.point + (verts @ flat.basis.T)


def relative_outward_normal(parent: Flat, child: Flat) -> Optional[np.ndarray]:
    """Unit normal of ``child`` inside the carrier of ``parent``.

    ``child`` must be a relative facet of ``parent`` (one dimension lower).
    The normal lies in the parent's carrier and points away from the
    parent's relative interior. Returns ``None`` for non-facets.
    """
    if parent.empty or child.empty or child.dim != parent.dim - 1:
        return None
    if parent.axis_dims is not None and child.axis_dims is not None:
        missing = sorted(set(parent.axis_dims) - set(child.axis_dims))
        if len(missing) != 1:
            return None
        d = missing[0]
        normal = np.zeros(len(parent.point))
        normal[d] = 1.0 if child.point[d] > parent.point[d] else -1.0
        return normal
    M = parent.basis.T @ child.basis
    u, s, _ = np.linalg.svd(M, full_matrices=True)
    u_loc = u[:, -1]
    normal = parent.basis @ u_loc
    normal /= np.linalg.norm(normal)
    if np.dot(normal, child.point - parent.point) < 0:
        normal = -normal
    return normal


def interior_cos(parent: Flat, face_a: Flat, face_b: Flat, same: bool) -> float:
    """Cosine of the interior angle of ``parent`` between two relative facets.

    The first normal points into the parent and the second points out,
    which reproduces the interior arc. Parallel carriers have no
    dihedral angle and give 0; a facet paired with itself gives 1.
    """
    if same:
        return 1.0
    na = relative_outward_normal(parent, face_a)
    nb = relative_outward_normal(parent, face_b)
    if na is None or nb is None:
        return 0.0
    dot = float(np.dot(-na, nb))
    if abs(dot) > 1.0 - 1e-12:
        return 0.0
    return float(np.clip(dot, -1.0, 1.0))


def contains(A: np.ndarray, c: np.ndarray, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Boolean mask of points satisfying ``A x <= c + tol``."""
    points = np.atleast_2d(points)
    return np.all(points @ np.asarray(A).T <= np.asarray(c) + tol, axis=1)


def diameter(flat: Flat, rng: Optional[np.random.Generator] = None, n_samples: int = 20_000) -> float:
    """Diameter of a full-dimensional flat (exact for dim <= 3)."""
    if flat.axis_dims is not None:
        return float("nan")
    if flat.dim <= EXACT_MAX_DIM:
        v = polytope_vertices(flat)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        lo, hi = _local_bounds(flat.local_A, flat.local_c)
        y = lo + (hi - lo) * rng.random((n_samples, flat.dim))
        y = y[np.all(y @ flat.local_A.T <= flat.local_c, axis=1)]
        v = flat.origin + y @ flat.basis.T
    if len(v) < 2:
        return 0.0
    diff = v[:, None, :] - v[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def stack(parts: Sequence[Tuple[np.ndarray, np.ndarray]]):
    A = np.vstack([p[0] for p in parts])
    c = np.concatenate([p[1] for p in parts])
    return A, c
