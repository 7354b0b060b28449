"""Partitions of an axis-aligned domain and their nerve complexes."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import polytope as pt
from .complex import Simplex, SimplicialComplex
from .errors import InputError


@dataclass(frozen=True)
class Domain:
    """Axis-aligned hyperrectangle ``[lo_1, hi_1] x ... x [lo_n, hi_n]``."""

    bounds: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not b:
            raise InputError("domain needs at least one coordinate")
        for lo, hi in b:
            if not lo < hi:
                raise InputError(f"domain interval [{lo}, {hi}] is empty")
        object.__setattr__(self, "bounds", b)

    @property
    def ambient_dim(self) -> int:
        return len(self.bounds)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.bounds, dtype=float)

    @property
    def volume(self) -> float:
        v = 1.0
        for lo, hi in self.bounds:
            v *= hi - lo
        return v

    def halfspaces(self):
        return pt.box_halfspaces(self.array)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        b = self.array
        return b[:, 0] + (b[:, 1] - b[:, 0]) * rng.random((n, self.ambient_dim))

    def scaled(self, factor: float) -> "Domain":
        return Domain(tuple((lo * factor, hi * factor) for lo, hi in self.bounds))


@dataclass(frozen=True)
class Box:
    """Axis-aligned cell geometry."""

    bounds: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.bounds, dtype=float)

    def halfspaces(self, domain: Domain):
        return pt.box_halfspaces(self.array)

    def scaled(self, factor: float) -> "Box":
        return Box(tuple((lo * factor, hi * factor) for lo, hi in self.bounds))


@dataclass(frozen=True)
class HPolytope:
    """Cell geometry ``{x : w_i . x + b_i <= 0}`` clipped to the domain."""

    W: Tuple[Tuple[float, ...], ...]
    b: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "W", tuple(tuple(float(x) for x in row) for row in self.W))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if len(self.W) != len(self.b):
            raise InputError("halfspace weight and offset counts differ")

    @classmethod
    def from_arrays(cls, W, b) -> "HPolytope":
        W = np.atleast_2d(np.asarray(W, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        return cls(tuple(map(tuple, W.tolist())), tuple(b.tolist()))

    def halfspaces(self, domain: Domain):
        A_d, c_d = domain.halfspaces()
        if not self.W:
            return A_d, c_d
        A = np.array(self.W, dtype=float)
        c = -np.array(self.b, dtype=float)
        return np.vstack([A, A_d]), np.concatenate([c, c_d])

    def scaled(self, factor: float) -> "HPolytope":
        return HPolytope(self.W, tuple(x * factor for x in self.b))


Geometry = Union[Box, HPolytope]


@dataclass(frozen=True)
class Predictor:
    """Local prediction function: a constant or an affine map ``x -> W x + b``."""

    constant: Optional[Tuple[float, ...]] = None
    W: Optional[Tuple[Tuple[float, ...], ...]] = None
    b: Optional[Tuple[float, ...]] = None

    @classmethod
    def const(cls, value) -> "Predictor":
        return cls(constant=tuple(np.atleast_1d(np.asarray(value, dtype=float)).tolist()))

    @classmethod
    def affine(cls, W, b) -> "Predictor":
        W = np.atleast_2d(np.asarray(W, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return cls(W=tuple(map(tuple, W.tolist())), b=tuple(b.tolist()))

    @property
    def is_affine(self) -> bool:
        return self.W is not None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.is_affine:
            return x @ np.array(self.W).T + np.array(self.b)
        return np.tile(np.array(self.constant), (x.shape[0], 1))

    def gradient(self, n: int) -> np.ndarray:
        """Jacobian of the predictor (zeros for a constant)."""
        if self.is_affine:
            return np.array(self.W, dtype=float)
        return np.zeros((len(self.constant), n))

    def value_vector(self) -> np.ndarray:
        if self.is_affine:
            raise ValueError("affine predictor has no constant value")
        return np.array(self.constant, dtype=float)


@dataclass(frozen=True)
class PartitionCell:
    id: int
    geometry: Geometry
    predictor: Optional[Predictor] = None


@dataclass
class Face:
    """Intersection of the closures of two or more cells.

    ``dim`` is -1 for an empty intersection. ``carrier`` holds a relative
    interior point and an orthonormal basis of the affine hull.
    """

    cell_ids: Tuple[int, ...]
    dim: int
    measure: float
    stderr: float = 0.0
    carrier: Optional[pt.Flat] = field(default=None, repr=False)

    @property
    def empty(self) -> bool:
        return self.dim < 0


@dataclass
class GeometryConfig:
    tol: float = pt.DEFAULT_TOL
    mc_samples: int = pt.DEFAULT_MC_SAMPLES
    seed: int = 0


class Partition:
    """A finite family of convex cells partitioning a domain.

    Args:
        domain: The bounding hyperrectangle.
        cells: Cells with unique ids.
        data_index: Optional map from cell id to indices of data points.
        config: Tolerances and Monte Carlo settings.
    """

    def __init__(
        self,
        domain: Domain,
        cells: Sequence[PartitionCell],
        data_index: Optional[Dict[int, List[int]]] = None,
        config: Optional[GeometryConfig] = None,
    ):
        if not cells:
            raise InputError("partition has no cells")
        ids = [c.id for c in cells]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate cell ids")
        n = domain.ambient_dim
        for c in cells:
            if isinstance(c.geometry, Box):
                if len(c.geometry.bounds) != n:
                    raise InputError(f"cell {c.id}: box dimension differs from domain")
                for (lo, hi), (dlo, dhi) in zip(c.geometry.bounds, domain.bounds):
                    if lo < dlo - 1e-12 or hi > dhi + 1e-12:
                        raise InputError(f"cell {c.id}: box leaves the domain")
            elif any(len(row) != n for row in c.geometry.W):
                raise InputError(f"cell {c.id}: halfspace dimension differs from domain")
        self.domain = domain
        self.cells: List[PartitionCell] = sorted(cells, key=lambda c: c.id)
        self._by_id = {c.id: c for c in self.cells}
        self.data_index: Dict[int, List[int]] = {c.id: [] for c in self.cells}
        if data_index:
            for k, v in data_index.items():
                self.data_index[int(k)] = list(v)
        self.config = config or GeometryConfig()
        self._faces: Dict[Tuple[int, ...], Face] = {}
        self._flats: Dict[Tuple[int, ...], pt.Flat] = {}
        self._lock = threading.Lock()

    # -- basic access -------------------------------------------------
    @property
    def ids(self) -> List[int]:
        return [c.id for c in self.cells]

    @property
    def n(self) -> int:
        return self.domain.ambient_dim

    def cell(self, cid: int) -> PartitionCell:
        try:
            return self._by_id[cid]
        except KeyError:
            raise InputError(f"unknown cell id {cid}") from None

    def all_boxes(self, ids: Iterable[int]) -> bool:
        return all(isinstance(self._by_id[i].geometry, Box) for i in ids)

    def _rng(self, key: Tuple[int, ...]) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, *key])

    # -- geometry -----------------------------------------------------
    def flat(self, ids: Iterable[int], with_measure: bool = True) -> pt.Flat:
        """Geometry of the intersection of the closures of cells ``ids``."""
        key = tuple(sorted(set(int(i) for i in ids)))
        for i in key:
            self.cell(i)
        with self._lock:
            cached = self._flats.get(key)
        if cached is not None and (not with_measure or not np.isnan(cached.measure)):
            return cached
        tol = self.config.tol
        if self.all_boxes(key):
            arrs = [self._by_id[i].geometry.array for i in key]
            lo = np.max([a[:, 0] for a in arrs], axis=0)
            hi = np.min([a[:, 1] for a in arrs], axis=0)
            f = pt.box_flat(np.stack([lo, hi], axis=1), tol)
        else:
            A, c = pt.stack([self._by_id[i].geometry.halfspaces(self.domain) for i in key])
            f = pt.analyze(A, c, tol, self.config.mc_samples, self._rng(key), with_measure=with_measure)
        with self._lock:
            if with_measure or key not in self._flats:
                self._flats[key] = f
        return f

    def intersects(self, ids: Iterable[int]) -> bool:
        key = tuple(sorted(set(ids)))
        with self._lock:
            cached = self._flats.get(key)
        if cached is not None:
            return not cached.empty
        if self.all_boxes(key):
            return not self.flat(key).empty
        A, c = pt.stack([self._by_id[i].geometry.halfspaces(self.domain) for i in key])
        return pt.feasible(A, c, self.config.tol)

    def face(self, ids: Iterable[int]) -> Face:
        """Face record for the closures of ``ids`` (cached)."""
        key = tuple(sorted(set(int(i) for i in ids)))
        with self._lock:
            if key in self._faces:
                return self._faces[key]
        f = self.flat(key)
        face = Face(key, f.dim, f.measure if not f.empty else 0.0, f.stderr, f if not f.empty else None)
        with self._lock:
            self._faces[key] = face
        return face

    def cell_flat(self, cid: int) -> pt.Flat:
        f = self.flat((cid,))
        if f.empty or f.dim < self.n:
            raise InputError(f"cell {cid} has empty interior")
        return f

    def cell_volume(self, cid: int) -> float:
        return self.cell_flat(cid).measure

    def cell_diameter(self, cid: int) -> float:
        geom = self._by_id[cid].geometry
        if isinstance(geom, Box):
            a = geom.array
            return float(np.linalg.norm(a[:, 1] - a[:, 0]))
        return pt.diameter(self.cell_flat(cid), self._rng((cid, 7)))

    def bounding_box(self, cid: int) -> np.ndarray:
        geom = self._by_id[cid].geometry
        if isinstance(geom, Box):
            return geom.array
        f = self.cell_flat(cid)
        lo, hi = pt._local_bounds(f.local_A, f.local_c)
        if f.dim == self.n and f.axis_dims is None:
            # full-dimensional: local coordinates are ambient offsets from origin
            return np.stack([f.origin + lo, f.origin + hi], axis=1)
        return self.domain.array

    # -- membership ---------------------------------------------------
    def contains(self, cid: int, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        A, c = self._by_id[cid].geometry.halfspaces(self.domain)
        return pt.contains(A, c, points, tol)

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Assign each point to a single cell id (-1 when outside all cells).

        Boxes use half-open intervals closed at the domain's upper bound;
        other cells take strict interior first and then the smallest id
        whose closure contains the point.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(points), -1, dtype=int)
        dom = self.domain.array
        if self.all_boxes(self.ids):
            for c in self.cells:
                a = c.geometry.array
                upper_ok = (points < a[:, 1]) | ((a[:, 1] >= dom[:, 1]) & (points <= a[:, 1]))
                inside = np.all((points >= a[:, 0]) & upper_ok, axis=1) & (out < 0)
                out[inside] = c.id
            return out
        tol = self.config.tol
        for c in self.cells:
            inside = self.contains(c.id, points, -tol) & (out < 0)
            out[inside] = c.id
        for c in self.cells:
            inside = self.contains(c.id, points, tol) & (out < 0)
            out[inside] = c.id
        return out

    def assign(self, points: np.ndarray) -> Dict[int, List[int]]:
        """Populate ``data_index`` from a point array and return it."""
        loc = self.locate(points)
        if np.any(loc < 0):
            bad = int(np.flatnonzero(loc < 0)[0])
            raise InputError(f"data point {bad} lies outside every cell")
        self.data_index = {c.id: [] for c in self.cells}
        for i, cid in enumerate(loc.tolist()):
            self.data_index[cid].append(i)
        return self.data_index

    def counts(self) -> np.ndarray:
        return np.array([len(self.data_index.get(c.id, [])) for c in self.cells], dtype=float)

    def scaled(self, factor: float) -> "Partition":
        cells = [PartitionCell(c.id, c.geometry.scaled(factor), c.predictor) for c in self.cells]
        return Partition(self.domain.scaled(factor), cells, self.data_index, self.config)


def cell_volume(partition: Partition, cid: int) -> float:
    """Volume of cell ``cid`` (exact for boxes and n <= 3)."""
    return partition.cell_volume(cid)


def face_measure(partition: Partition, ids: Sequence[int]) -> Face:
    """Face of two or more cells; empty intersections give ``dim == -1``."""
    if len(set(ids)) < 2:
        raise InputError("a face needs at least two cells")
    return partition.face(ids)


def dihedral_cos(partition: Partition, cid: int, face_a: Face, face_b: Face) -> float:
    """Cosine of the interior angle of cell ``cid`` between two facets.

    The first normal points into the cell and the second out of it.
    Non-facets follow the zero convention and return 0.
    """
    n = partition.n
    if face_a.dim != n - 1 or face_b.dim != n - 1:
        return 0.0
    if cid not in face_a.cell_ids or cid not in face_b.cell_ids:
        raise InputError(f"faces are not on the boundary of cell {cid}")
    parent = partition.cell_flat(cid)
    return pt.interior_cos(parent, face_a.carrier, face_b.carrier, face_a.cell_ids == face_b.cell_ids)


def build_nerve(
    partition: Partition,
    max_dim: int = 3,
    tol: Optional[float] = None,
    with_faces: bool = True,
) -> Tuple[SimplicialComplex, Dict[Simplex, Face]]:
    """Nerve of the partition: a simplex for each set of meeting closures.

    Pairs are tested first (after a bounding-box prefilter); higher
    simplices are grown only from known simplices whose vertices are all
    pairwise adjacent, up to ``max_dim``.
    """
    if max_dim < 1:
        raise InputError("max_dim must be at least 1")
    if tol is not None:
        partition.config.tol = tol
    ids = partition.ids
    for cid in ids:
        partition.cell_flat(cid)
    boxes = {cid: partition.bounding_box(cid) for cid in ids}
    slack = partition.config.tol
    adj: Dict[int, set] = {cid: set() for cid in ids}
    simplices: List[Simplex] = [(cid,) for cid in ids]
    layer: List[Simplex] = []
    for a, b in combinations(ids, 2):
        ba, bb = boxes[a], boxes[b]
        if np.any(ba[:, 0] > bb[:, 1] + slack) or np.any(bb[:, 0] > ba[:, 1] + slack):
            continue
        if partition.intersects((a, b)):
            adj[a].add(b)
            adj[b].add(a)
            layer.append((a, b))
    simplices.extend(layer)
    p = 1
    while layer and p < max_dim:
        nxt = []
        for s in layer:
            common = set.intersection(*(adj[v] for v in s))
            for v in sorted(u for u in common if u > s[-1]):
                cand = s + (v,)
                if partition.intersects(cand):
                    nxt.append(cand)
        simplices.extend(nxt)
        layer = nxt
        p += 1
    complex_ = SimplicialComplex(simplices)
    faces: Dict[Simplex, Face] = {}
    if with_faces:
        for s in complex_.all_simplices():
            if len(s) >= 2:
                faces[s] = partition.face(s)
    return complex_, faces


def partition_check(partition: Partition, n_samples: int = 100_000, seed: int = 0, band: Optional[float] = None):
    """Monte Carlo check that cell interiors are disjoint and cover the domain.

    Returns a dict with the number of samples found in no cell interior
    and not near any boundary (``uncovered``) and the number in more than
    one interior (``overlapping``).
    """
    rng = np.random.default_rng(seed)
    x = partition.domain.sample(n_samples, rng)
    band = partition.config.tol * 10 if band is None else band
    inner = np.zeros(n_samples, dtype=int)
    closed = np.zeros(n_samples, dtype=int)
    for c in partition.cells:
        inner += partition.contains(c.id, x, -band)
        closed += partition.contains(c.id, x, band)
    return {
        "samples": n_samples,
        "uncovered": int(np.count_nonzero(closed == 0)),
        "overlapping": int(np.count_nonzero(inner > 1)),
        "ok": bool(np.all(closed >= 1) and np.all(inner <= 1)),
    }
