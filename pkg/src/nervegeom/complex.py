"""Oriented simplicial complexes, chains, cochains and (co)boundary operators.

Simplices are stored canonically as strictly increasing tuples of integer
vertex ids. Orientation, when it matters, is carried by a separate sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
from scipy import sparse

from .errors import InputError

Simplex = Tuple[int, ...]


def simplex(*vertices: int) -> Simplex:
    """Return the canonical (sorted) simplex on ``vertices``."""
    s = tuple(sorted(int(v) for v in vertices))
    if len(set(s)) != len(s):
        raise InputError(f"repeated vertex in simplex {vertices}")
    return s


def permutation_sign(seq: Sequence[int]) -> int:
    """Sign of the permutation that sorts ``seq`` (all entries distinct)."""
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def faces(s: Simplex) -> List[Simplex]:
    """Codimension-one faces in the order of the alternating boundary sum."""
    return [s[:j] + s[j + 1:] for j in range(len(s))]


class SimplicialComplex:
    """A finite abstract simplicial complex closed under taking faces.

    Args:
        simplices: Any iterable of vertex collections. Every face of every
            given simplex is added, so the result always satisfies closure.
    """

    def __init__(self, simplices: Iterable[Iterable[int]] = ()):
        by_dim: Dict[int, set] = {}
        for raw in simplices:
            s = simplex(*raw)
            if not s:
                continue
            for k in range(1, len(s) + 1):
                for sub in combinations(s, k):
                    by_dim.setdefault(k - 1, set()).add(sub)
        self._by_dim: Dict[int, List[Simplex]] = {p: sorted(v) for p, v in by_dim.items()}
        self._index: Dict[int, Dict[Simplex, int]] = {
            p: {s: i for i, s in enumerate(v)} for p, v in self._by_dim.items()
        }
        self._cofaces: Dict[Simplex, List[Simplex]] | None = None

    @property
    def dim(self) -> int:
        return max(self._by_dim) if self._by_dim else -1

    @property
    def vertices(self) -> List[int]:
        return [s[0] for s in self._by_dim.get(0, [])]

    def simplices(self, p: int) -> List[Simplex]:
        """Canonically ordered list of p-simplices (empty if none)."""
        return list(self._by_dim.get(p, []))

    def all_simplices(self) -> List[Simplex]:
        return [s for p in sorted(self._by_dim) for s in self._by_dim[p]]

    def count(self, p: int) -> int:
        return len(self._by_dim.get(p, []))

    def f_vector(self) -> List[int]:
        return [self.count(p) for p in range(self.dim + 1)]

    def index(self, s: Simplex) -> int:
        try:
            return self._index[len(s) - 1][s]
        except KeyError:
            raise InputError(f"simplex {s} not in complex") from None

    def __contains__(self, s) -> bool:
        s = tuple(s)
        return s in self._index.get(len(s) - 1, {})

    def __eq__(self, other) -> bool:
        return isinstance(other, SimplicialComplex) and self._by_dim == other._by_dim

    def __repr__(self) -> str:
        return f"SimplicialComplex(f_vector={self.f_vector()})"

    def neighbors(self, v: int) -> List[int]:
        """Vertices joined to ``v`` by an edge, ascending."""
        out = []
        for e in self.cofaces((v,), 1):
            out.append(e[0] if e[1] == v else e[1])
        return sorted(out)

    def cofaces(self, s: Simplex, p: int | None = None) -> List[Simplex]:
        """Simplices strictly containing ``s`` (optionally only dimension p)."""
        if self._cofaces is None:
            table: Dict[Simplex, List[Simplex]] = {}
            for t in self.all_simplices():
                for k in range(1, len(t)):
                    for sub in combinations(t, k):
                        table.setdefault(sub, []).append(t)
            self._cofaces = table
        found = self._cofaces.get(tuple(s), [])
        if p is not None:
            found = [t for t in found if len(t) == p + 1]
        return list(found)

    def boundary_matrix(self, p: int) -> sparse.csr_matrix:
        """Matrix of the boundary map from p-chains to (p-1)-chains.

        Rows index (p-1)-simplices and columns p-simplices, both in
        canonical order. Entries are the signs (-1)^j.
        """
        if p < 1:
            raise InputError("boundary_matrix requires p >= 1")
        rows, cols, vals = [], [], []
        for c, s in enumerate(self.simplices(p)):
            for j, f in enumerate(faces(s)):
                rows.append(self._index[p - 1][f])
                cols.append(c)
                vals.append((-1) ** j)
        shape = (self.count(p - 1), self.count(p))
        return sparse.csr_matrix((vals, (rows, cols)), shape=shape, dtype=float)

    def coboundary_matrix(self, p: int) -> sparse.csr_matrix:
        """Matrix of the coboundary from p-cochains to (p+1)-cochains."""
        return self.boundary_matrix(p + 1).T.tocsr()

    def is_connected(self) -> bool:
        return self.n_components() <= 1

    def n_components(self) -> int:
        verts = self.vertices
        if not verts:
            return 0
        parent = {v: v for v in verts}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.simplices(1):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        return len({find(v) for v in verts})


def closure_of(complex_: SimplicialComplex, simplices: Iterable[Simplex]) -> SimplicialComplex:
    """Smallest subcomplex of ``complex_`` containing ``simplices``."""
    items = [tuple(s) for s in simplices]
    for s in items:
        if s not in complex_:
            raise InputError(f"simplex {s} not in complex")
    return SimplicialComplex(items)


def closed_star(complex_: SimplicialComplex, sigma: Simplex) -> SimplicialComplex:
    """Closure of all simplices having ``sigma`` as a face (including itself)."""
    sigma = tuple(sigma)
    if sigma not in complex_:
        raise InputError(f"simplex {sigma} not in complex")
    return SimplicialComplex([sigma] + complex_.cofaces(sigma))


@dataclass
class Chain:
    """Formal real combination of oriented p-simplices."""

    dim: int
    coefficients: Dict[Simplex, float] = field(default_factory=dict)

    def __post_init__(self):
        clean: Dict[Simplex, float] = {}
        for s, a in self.coefficients.items():
            key = tuple(s)
            if len(key) != self.dim + 1:
                raise InputError(f"simplex {key} has wrong dimension for a {self.dim}-chain")
            canon = tuple(sorted(key))
            clean[canon] = clean.get(canon, 0.0) + permutation_sign(key) * float(a)
        self.coefficients = clean

    def __add__(self, other: "Chain") -> "Chain":
        if other.dim != self.dim:
            raise InputError("cannot add chains of different dimension")
        out = dict(self.coefficients)
        for s, a in other.coefficients.items():
            out[s] = out.get(s, 0.0) + a
        return Chain(self.dim, out)

    def scale(self, c: float) -> "Chain":
        return Chain(self.dim, {s: c * a for s, a in self.coefficients.items()})

    def nonzero(self, tol: float = 0.0) -> Dict[Simplex, float]:
        return {s: a for s, a in self.coefficients.items() if abs(a) > tol}


@dataclass
class Cochain:
    """Real-valued function on oriented p-simplices (a discrete p-form)."""

    dim: int
    values: Dict[Simplex, float] = field(default_factory=dict)

    def pair(self, chain: Chain) -> float:
        """Evaluate the cochain on a chain."""
        if chain.dim != self.dim:
            raise InputError("cochain/chain dimension mismatch")
        return float(sum(a * self.values.get(s, 0.0) for s, a in chain.coefficients.items()))

    def to_vector(self, complex_: SimplicialComplex) -> np.ndarray:
        return np.array([self.values.get(s, 0.0) for s in complex_.simplices(self.dim)])

    @classmethod
    def from_vector(cls, complex_: SimplicialComplex, p: int, vec) -> "Cochain":
        return cls(p, {s: float(x) for s, x in zip(complex_.simplices(p), vec)})


def boundary(chain: Chain) -> Chain:
    """Apply the boundary operator with alternating signs."""
    if chain.dim < 1:
        raise InputError("boundary of a 0-chain is not defined here")
    out: Dict[Simplex, float] = {}
    for s, a in chain.coefficients.items():
        for j, f in enumerate(faces(s)):
            out[f] = out.get(f, 0.0) + (-1) ** j * a
    return Chain(chain.dim - 1, out)


def coboundary(cochain: Cochain, complex_: SimplicialComplex) -> Cochain:
    """Coboundary: (dω)(σ) = ω(∂σ) for every (p+1)-simplex σ."""
    p = cochain.dim
    vals = {}
    for s in complex_.simplices(p + 1):
        vals[s] = float(sum((-1) ** j * cochain.values.get(f, 0.0) for j, f in enumerate(faces(s))))
    return Cochain(p + 1, vals)


def chain_vector(chain: Chain, complex_: SimplicialComplex) -> np.ndarray:
    return np.array([chain.coefficients.get(s, 0.0) for s in complex_.simplices(chain.dim)])


def as_mapping(values: Mapping[Simplex, float] | Sequence[float], keys: Sequence[Simplex]) -> Dict[Simplex, float]:
    if isinstance(values, Mapping):
        return {k: float(values[k]) for k in keys}
    return {k: float(x) for k, x in zip(keys, values)}
