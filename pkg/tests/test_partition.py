import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from nervegeom import io as nio
from nervegeom.errors import InputError
from nervegeom.partition import (
    Box,
    Domain,
    HPolytope,
    Partition,
    PartitionCell,
    build_nerve,
    dihedral_cos,
    partition_check,
)

from conftest import random_box_partition

SQRT5_4 = math.sqrt(5.0) / 4.0


def _closures_meet(part, ids):
    A = np.vstack([part.cell(i).geometry.halfspaces(part.domain)[0] for i in ids])
    c = np.concatenate([part.cell(i).geometry.halfspaces(part.domain)[1] for i in ids])
    res = linprog(np.zeros(part.n), A_ub=A, b_ub=c + 1e-9, bounds=[(None, None)] * part.n, method="highs")
    return res.status == 0


def test_tree_example_nerve(tree_partition):
    K, _ = build_nerve(tree_partition)
    assert K.f_vector() == [4, 5, 2]
    for a, b in itertools.combinations(tree_partition.ids, 2):
        assert ((a, b) in K) == _closures_meet(tree_partition, (a, b))
    assert (1, 3) not in K


def test_two_neuron_nerve_is_tetrahedron(two_neuron_partition):
    K, _ = build_nerve(two_neuron_partition)
    assert K.f_vector() == [4, 6, 4, 1]
    assert (0, 1, 2, 3) in K


def test_single_cell():
    P = Partition(Domain(((0, 1), (0, 1))), [PartitionCell(0, Box(((0, 1), (0, 1))))])
    K, _ = build_nerve(P)
    assert K.f_vector() == [1]


def test_cell_volumes(tree_partition, two_neuron_partition):
    assert [tree_partition.cell_volume(c) for c in (1, 2, 3, 4)] == [2.0, 6.0, 2.0, 6.0]
    vols = [two_neuron_partition.cell_volume(c) for c in range(4)]
    assert vols == pytest.approx([0.125, 0.375, 0.375, 0.125], abs=1e-12)


def test_two_neuron_corner_cell_matches_monte_carlo(two_neuron_partition):
    rng = np.random.default_rng(161)
    x = rng.uniform(size=(10**6, 2))
    inside = (2 * x[:, 0] - x[:, 1] > 0.5) & (-x[:, 0] + 2 * x[:, 1] > 0.5)
    p = inside.mean()
    se = math.sqrt(p * (1 - p) / len(x))
    assert abs(two_neuron_partition.cell_volume(3) - p) <= 3 * se


def test_face_measures(tree_partition, two_neuron_partition):
    f12 = tree_partition.face((1, 2))
    f14 = tree_partition.face((1, 4))
    assert (f12.dim, f12.measure) == (1, 2.0)
    assert (f14.dim, f14.measure) == (1, 1.0)
    f5 = two_neuron_partition.face((0, 3))
    assert (f5.dim, f5.measure) == (0, 1.0)
    assert np.allclose(f5.carrier.point, [0.5, 0.5])
    assert two_neuron_partition.face((0, 1)).measure == pytest.approx(SQRT5_4, abs=1e-12)
    empty = tree_partition.face((1, 3))
    assert empty.empty and empty.measure == 0.0


def test_face_measure_is_symmetric(two_neuron_partition):
    a = two_neuron_partition.face((1, 3))
    b = two_neuron_partition.face((3, 1))
    assert (a.dim, a.measure) == (b.dim, b.measure)


def test_dihedral_cos(tree_partition, two_neuron_partition):
    P = tree_partition
    assert dihedral_cos(P, 1, P.face((1, 2)), P.face((1, 4))) == 0.0
    assert dihedral_cos(P, 2, P.face((1, 2)), P.face((2, 4))) == 0.0
    Q = two_neuron_partition
    assert dihedral_cos(Q, 0, Q.face((0, 2)), Q.face((0, 1))) == pytest.approx(0.8, abs=1e-12)
    f = Q.face((0, 1))
    assert dihedral_cos(Q, 0, f, f) == pytest.approx(1.0, abs=1e-12)


def test_degenerate_cell_rejected():
    D = Domain(((0, 1), (0, 1)))
    flat = PartitionCell(0, HPolytope(((1.0, 0.0), (-1.0, 0.0)), (-0.5, 0.5)))
    with pytest.raises(InputError):
        build_nerve(Partition(D, [flat, PartitionCell(1, Box(((0, 1), (0, 1))))]))


def test_invalid_partitions():
    D = Domain(((0, 1), (0, 1)))
    with pytest.raises(InputError):
        Partition(D, [])
    with pytest.raises(InputError):
        Partition(D, [PartitionCell(0, Box(((0, 2), (0, 1))))])
    with pytest.raises(InputError):
        Partition(D, [PartitionCell(0, Box(((0, 1), (0, 1)))), PartitionCell(0, Box(((0, 1), (0, 1))))])


def test_partition_check_fixtures(tree_partition, two_neuron_partition):
    for P in (tree_partition, two_neuron_partition):
        assert partition_check(P, 100_000, seed=1)["ok"]


def test_hpolytope_agrees_with_box(tree_partition):
    cells = []
    for c in tree_partition.cells:
        a = c.geometry.array
        W = [(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)]
        b = [a[0, 0], -a[0, 1], a[1, 0], -a[1, 1]]
        cells.append(PartitionCell(c.id, HPolytope(tuple(W), tuple(b))))
    H = Partition(tree_partition.domain, cells)
    K1, F1 = build_nerve(tree_partition)
    K2, F2 = build_nerve(H)
    assert K1.all_simplices() == K2.all_simplices()
    for s in F1:
        assert F1[s].dim == F2[s].dim
        assert F1[s].measure == pytest.approx(F2[s].measure, abs=1e-9)
    for c in H.ids:
        assert H.cell_volume(c) == pytest.approx(tree_partition.cell_volume(c), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_box_partition_properties(seed, depth):
    rng = np.random.default_rng(seed)
    P = random_box_partition(rng, depth)
    assert sum(P.cell_volume(c) for c in P.ids) == pytest.approx(1.0, abs=1e-12)
    K, faces = build_nerve(P)
    for s, f in faces.items():
        if len(s) == 2 and f.dim == 1:
            for c in s:
                others = [e for e in K.cofaces((c,), 1) if e != s and faces[e].dim == 1]
                for e in others:
                    assert dihedral_cos(P, c, f, faces[e]) == 0.0
    shuffled = Partition(P.domain, list(reversed(P.cells)))
    assert build_nerve(shuffled)[0].all_simplices() == K.all_simplices()


def test_locate_and_assign(tree_partition):
    pts = np.array([[1.0, 0.5], [1.0, 2.0], [3.0, 3.5], [3.0, 1.0], [4.0, 4.0]])
    assert tree_partition.locate(pts).tolist() == [1, 2, 3, 4, 3]
    idx = tree_partition.assign(pts)
    assert idx == {1: [0], 2: [1], 3: [2, 4], 4: [3]}


def test_fixture_round_trip(tree_partition):
    doc = nio.partition_to_dict(tree_partition)
    again = nio.partition_from_dict(doc)
    assert [c.geometry for c in again.cells] == [c.geometry for c in tree_partition.cells]
