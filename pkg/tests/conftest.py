import itertools

import pytest

from nervegeom import io as nio
from nervegeom.complex import SimplicialComplex
from nervegeom.ensemble import random_tree
from nervegeom.metric import RiemannianStructure
from nervegeom.nn import LayerSpec
from nervegeom.partition import Box, Domain, Partition, PartitionCell, build_nerve

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def tree_partition():
    return nio.load_partition(nio.fixture_path("tree_example.json"))


@pytest.fixture
def two_neuron_partition():
    return nio.load_partition(nio.fixture_path("two_neuron.json"))


def structure_of(part, max_dim=3):
    K, _ = build_nerve(part, max_dim, with_faces=False)
    return RiemannianStructure(part, K, max_dim)


def two_neuron_layer():
    return LayerSpec.from_arrays([[2.0, -1.0], [-1.0, 2.0]], [-0.5, -0.5])


def random_complex(rng, n_vertices=8, max_dim=3, n_top=6):
    simplices = [(v,) for v in range(n_vertices)]
    for _ in range(n_top):
        k = int(rng.integers(2, max_dim + 2))
        simplices.append(tuple(sorted(rng.choice(n_vertices, size=k, replace=False).tolist())))
    return SimplicialComplex(simplices)


def random_box_partition(rng, depth=3, n=2):
    domain = Domain(tuple((0.0, 1.0) for _ in range(n)))
    return random_tree(domain, depth, rng, min_width=0.08)


def grid_partition(nx, ny, size=1.0):
    domain = Domain(((0.0, nx * size), (0.0, ny * size)))
    cells = []
    for i, (a, b) in enumerate(itertools.product(range(nx), range(ny))):
        cells.append(PartitionCell(i, Box(((a * size, (a + 1) * size), (b * size, (b + 1) * size)))))
    return Partition(domain, cells)


def random_net(rng, n_layers, n_in=2, max_width=4, last=None):
    widths = [n_in] + [int(rng.integers(2, max_width + 1)) for _ in range(n_layers)]
    if last is not None:
        widths[-1] = last
    layers = []
    for a, b in zip(widths, widths[1:]):
        W = rng.normal(size=(b, a))
        bias = rng.normal(size=b) * 0.5
        layers.append(LayerSpec.from_arrays(W, bias))
    return layers
