"""The eleven acceptance criteria, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL`` line; the lines are
printed in the terminal summary (see ``conftest.py``) and echoed to stdout.
"""

import itertools
import math
from fractions import Fraction

import numpy as np
from scipy import integrate

from nervegeom import cli
from nervegeom import io as nio
from nervegeom.calculus import SplineProblem, barycentric_lift, penalty_matrix, solve_simplicial_spline
from nervegeom.complex import Chain, Cochain, boundary, coboundary
from nervegeom.density import WeightedGraph, edge_omega, estimate_density, geodesic_distances, interpolate_edge_density
from nervegeom.ensemble import batch_cooccurrence, boosting_step, monitor, random_tree, start_boosting
from nervegeom.metric import simplex_volume_cayley_menger
from nervegeom.nn import (
    backward_sequence,
    composed_affine,
    composed_pullback,
    lemma_check,
    locate_chain,
    pullback_volume,
    verify_simplicial_map,
)
from nervegeom.partition import Domain, build_nerve, dihedral_cos
from nervegeom.ricci import neighbor_measure, ricci_geometric

from conftest import ACCEPTANCE_LINES, grid_partition, random_box_partition, random_complex, random_net, structure_of


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


# 1 -------------------------------------------------------------------------

def test_criterion_01_tree_example(tree_partition):
    S = structure_of(tree_partition)
    vols = [tree_partition.cell_volume(c) for c in (1, 2, 3, 4)]
    G, order = S.star_gram((1,), 1)
    kappa = S.gram_condition(1)
    off = []
    for v in S.complex.vertices:
        for p in range(1, S.complex.dim + 1):
            Gv, _ = S.star_gram((v,), p)
            off.extend((Gv - np.diag(np.diag(Gv))).ravel().tolist())
    ok = (vols == [2.0, 6.0, 2.0, 6.0] and G.tolist() == [[2.0, 0.0], [0.0, 1.0]]
          and kappa == 2.0 and all(x == 0.0 for x in off))
    record(1, ok, f"volumes={vols} G_v1={G.tolist()} kappa={kappa} max|offdiag|={max(map(abs, off), default=0.0)}")


# 2 -------------------------------------------------------------------------

def test_criterion_02_two_neuron(two_neuron_partition):
    P = two_neuron_partition
    K, faces = build_nerve(P)
    fv = K.f_vector()
    cos12 = dihedral_cos(P, 0, P.face((0, 2)), P.face((0, 1)))
    point_faces = [faces[(0, 3)], faces[(1, 2)]]
    vols = np.array([P.cell_volume(c) for c in P.ids])
    rng = np.random.default_rng(20240601)
    N = 10**6
    x = rng.uniform(0.0, 1.0, size=(N, 2))
    pat = (x @ np.array([[2.0, -1.0], [-1.0, 2.0]]).T - 0.5 > 0).astype(int)
    cell = pat[:, 0] * 2 + pat[:, 1]
    frac = np.bincount(cell, minlength=4) / N
    sigma = np.sqrt(frac * (1 - frac) / N)
    z = np.abs(vols - frac) / sigma
    ok = (fv == [4, 6, 4, 1] and abs(cos12 - 0.8) <= 1e-12
          and all(f.dim == 0 and f.measure == 1.0 for f in point_faces)
          and abs(vols.sum() - 1.0) <= 1e-9 and np.all(z <= 3.0))
    record(2, ok, f"f={fv} cos={cos12!r} point faces={[(f.dim, f.measure) for f in point_faces]} "
                  f"sum={vols.sum()!r} max z={z.max():.2f}")


# 3 -------------------------------------------------------------------------

def test_criterion_03_chain_identities():
    rng = np.random.default_rng(3)
    worst = 0.0
    nonzero_dd = 0
    for _ in range(20):
        K = random_complex(rng, n_vertices=int(rng.integers(4, 9)), max_dim=3, n_top=int(rng.integers(3, 8)))
        for p in range(2, K.dim + 1):
            dd = (K.boundary_matrix(p - 1) @ K.boundary_matrix(p)).toarray()
            nonzero_dd += int(np.count_nonzero(dd))
        for _ in range(5):
            for p in range(0, K.dim):
                omega = Cochain.from_vector(K, p, rng.normal(size=K.count(p)))
                sigma = Chain(p + 1, {s: float(rng.normal()) for s in K.simplices(p + 1)})
                lhs = coboundary(omega, K).pair(sigma)
                rhs = omega.pair(boundary(sigma)) if p + 1 >= 1 else 0.0
                worst = max(worst, abs(lhs - rhs))
    ok = nonzero_dd == 0 and worst <= 1e-12
    record(3, ok, f"nonzero entries of dd={nonzero_dd} max Stokes gap={worst:.3g}")


# 4 -------------------------------------------------------------------------

def _numeric_integral(points, values):
    pts = np.asarray(points, dtype=float)
    u = np.asarray(values, dtype=float)
    if len(pts) == 2:
        length = np.linalg.norm(pts[1] - pts[0])
        val, _ = integrate.quad(lambda t: (u[0] * (1 - t) + u[1] * t) * length, 0.0, 1.0, epsabs=0, epsrel=1e-12)
        return val
    e1, e2 = pts[1] - pts[0], pts[2] - pts[0]
    jac = np.linalg.norm(np.cross(e1, e2))

    def f(t, s):
        return (u[0] * (1 - s - t) + u[1] * s + u[2] * t) * jac

    val, _ = integrate.dblquad(f, 0.0, 1.0, 0.0, lambda s: 1.0 - s, epsabs=0, epsrel=1e-12)
    return val


def test_criterion_04_whitney_and_cayley_menger():
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(50):
        k = 2 if i % 2 else 3
        pts = rng.normal(size=(k, 3))
        u = rng.normal(size=k)
        L = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        lifted = barycentric_lift(u, L)
        ref = _numeric_integral(pts, u)
        worst = max(worst, abs(lifted - ref) / max(abs(ref), 1e-300))
    tri = simplex_volume_cayley_menger(np.ones((3, 3)) - np.eye(3))
    tet = simplex_volume_cayley_menger(np.ones((4, 4)) - np.eye(4))
    e_tri, e_tet = abs(tri - math.sqrt(3) / 4), abs(tet - 1 / (6 * math.sqrt(2)))
    ok = worst <= 1e-6 and e_tri <= 1e-12 and e_tet <= 1e-12
    record(4, ok, f"max rel lift error={worst:.3g} CM errors=({e_tri:.3g}, {e_tet:.3g})")


# 5 -------------------------------------------------------------------------

def _gradient_descent(y, P, tol=1e-13, max_iter=500_000):
    M = np.eye(len(y)) + P
    step = 1.0 / np.linalg.norm(M, 2)
    u = y.copy()
    for _ in range(max_iter):
        g = M @ u - y
        if np.linalg.norm(g) <= tol * max(np.linalg.norm(y), 1.0):
            break
        u = u - step * g
    r = y - u
    return float(r @ r + u @ P @ u)


def test_criterion_05_spline_solver():
    rng = np.random.default_rng(5)
    exact_zero = True
    worst_res = 0.0
    monotone = True
    worst_energy = 0.0
    for _ in range(20):
        part = random_box_partition(rng, depth=int(rng.integers(2, 4)))
        S = structure_of(part)
        assert S.complex.is_connected()
        nv = S.complex.count(0)
        y = rng.normal(size=nv)
        res0 = solve_simplicial_spline(SplineProblem(y, [(0, 1, 0.0)]), S)
        exact_zero &= bool(np.array_equal(res0.u, y))
        variances = []
        for lam in (0.1, 1.0, 10.0, 100.0):
            r = solve_simplicial_spline(SplineProblem(y, [(0, 1, lam)]), S)
            worst_res = max(worst_res, r.residual / np.linalg.norm(y))
            variances.append(float(np.var(r.u)))
        monotone &= all(b <= a + 1e-12 * max(a, 1.0) for a, b in zip(variances, variances[1:]))
        penalties = [(0, 1, 1.0), (1, 1, 0.5)]
        r = solve_simplicial_spline(SplineProblem(y, penalties), S)
        worst_res = max(worst_res, r.residual / np.linalg.norm(y))
        e_gd = _gradient_descent(y, penalty_matrix(S, penalties))
        worst_energy = max(worst_energy, abs(r.energy - e_gd))
    ok = exact_zero and worst_res <= 1e-8 and monotone and worst_energy <= 1e-6
    record(5, ok, f"lambda=0 exact={exact_zero} max residual/|y|={worst_res:.3g} "
                  f"variance monotone={monotone} max energy gap={worst_energy:.3g}")


# 6 -------------------------------------------------------------------------

def _exhaustive(adj, n, source):
    best = {v: math.inf for v in range(n)}

    def walk(v, d, seen):
        if d < best[v]:
            best[v] = d
        for w, length in adj[v]:
            if w not in seen:
                walk(w, d + length, seen | {w})

    walk(source, 0.0, {source})
    return best


def test_criterion_06_geodesics():
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        lengths = {}
        for a, b in itertools.combinations(range(n), 2):
            if rng.random() < 0.45:
                lengths[(a, b)] = float(rng.uniform(0.1, 3.0))
        g = WeightedGraph(list(range(n)), lengths)
        adj = {v: [] for v in range(n)}
        for (a, b), w in lengths.items():
            adj[a].append((b, w))
            adj[b].append((a, w))
        for s in range(n):
            ref = _exhaustive(adj, n, s)
            got = geodesic_distances(g, s).distance
            mismatches += sum(1 for v in range(n) if got[v] != ref[v])
    record(6, mismatches == 0, f"mismatches={mismatches} over 100 graphs")


# 7 -------------------------------------------------------------------------

class _Lengths:
    """Minimal stand-in exposing the metric edge length used by neighbour measures."""

    def __init__(self, lengths):
        self.lengths = lengths

    def edge_length(self, e):
        return self.lengths[tuple(sorted(e))]


def _w1_enumerate(mu, nu, cost):
    xs, ys = sorted(mu), sorted(nu)
    m, n = len(xs), len(ys)
    a = np.array([mu[x] for x in xs])
    b = np.array([nu[y] for y in ys])
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A[m + j, j::n] = 1.0
    rhs = np.concatenate([a, b])[:-1]
    A = A[:-1]
    C = np.array([[cost(x, y) for y in ys] for x in xs]).ravel()
    r = m + n - 1
    best = math.inf
    for S in itertools.combinations(range(m * n), r):
        M = A[:, S]
        if abs(np.linalg.det(M)) < 0.5:
            continue
        t = np.linalg.solve(M, rhs)
        if np.all(t >= -1e-12):
            best = min(best, float(C[list(S)] @ t))
    return best


def _random_small_graph(rng):
    while True:
        n = int(rng.integers(3, 6))
        edges = [e for e in itertools.combinations(range(n), 2) if rng.random() < 0.6]
        g = WeightedGraph(list(range(n)), {e: float(rng.uniform(0.2, 2.0)) for e in edges})
        seen, stack = {0}, [0]
        while stack:
            v = stack.pop()
            for w in g.neighbors(v):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) == n and edges:
            return g


def test_criterion_07_ollivier_ricci():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        g = _random_small_graph(rng)
        metric = _Lengths({e: float(rng.uniform(0.5, 2.0)) for e in g.lengths})
        geos = {v: geodesic_distances(g, v) for v in g.vertices}
        for v, w in g.lengths:
            ric = ricci_geometric(g, metric, v, w, geos)
            mu, nu = neighbor_measure(g, metric, v), neighbor_measure(g, metric, w)
            ref = 1.0 - _w1_enumerate(mu, nu, lambda a, b: geos[a].distance[b]) / geos[v].distance[w]
            worst = max(worst, abs(ric - ref))
    leaf = WeightedGraph([0, 1], {(0, 1): 1.7})
    ric_leaf = ricci_geometric(leaf, _Lengths({(0, 1): 1.0}), 0, 1)
    tri = WeightedGraph([0, 1, 2], {(0, 1): 1.0, (0, 2): 1.0, (1, 2): 1.0})
    same = {0: 0.25, 1: 0.25, 2: 0.5}
    ric_same = ricci_geometric(tri, None, 0, 1, measures={0: same, 1: dict(same)})
    ok = worst <= 1e-9 and ric_leaf == 0.0 and ric_same == 1.0
    record(7, ok, f"max |Ric - enumeration|={worst:.3g} leaf-leaf={ric_leaf!r} identical={ric_same!r}")


# 8 -------------------------------------------------------------------------

def test_criterion_08_density():
    rng = np.random.default_rng(8)
    exact = True
    for _ in range(20):
        part = random_box_partition(rng, depth=3)
        S = structure_of(part)
        counts = rng.integers(1, 50, size=S.complex.count(0)).astype(float)
        field = estimate_density(S, counts, lam=0.0)
        vols = [part.cell_volume(v) for v in S.complex.vertices]
        exact &= all(field.rho_vertex[v] == c / vol for v, c, vol in zip(S.complex.vertices, counts, vols))
    worst = 0.0
    checked = 0
    for nx, ny in [(2, 2), (3, 2), (4, 3)]:
        part = grid_partition(nx, ny)
        S = structure_of(part)
        field = estimate_density(S, [7.0] * S.complex.count(0), lam=0.0)
        for e in S.complex.simplices(1):
            if S.facet_measure(e) <= 0 or edge_omega(S, e) != 1.0:
                continue
            vals = [interpolate_edge_density(field, S, s).rho_edge[e] for s in ("arithmetic", "harmonic", "geometric", "lift")]
            worst = max(worst, max(vals) - min(vals))
            checked += 1
    ok = exact and checked > 0 and worst <= 1e-12
    record(8, ok, f"lambda=0 exact={exact} omega=1 edges checked={checked} max scheme spread={worst:.3g}")


# 9 -------------------------------------------------------------------------

def test_criterion_09_ensemble_boosting():
    rng = np.random.default_rng(9)
    domain = Domain(((0.0, 1.0), (0.0, 1.0)))
    worst_k = 0.0
    formula_exact = True
    n_formula = 0
    baseline_ok = True
    worst_z = 0.0
    for trial in range(20):
        trees = [random_tree(domain, 2, rng, min_width=0.1) for _ in range(5)]
        eta = None if trial % 2 == 0 else 0.8
        state = start_boosting(trees[0], eta, max_dim=2)
        for t in trees[1:]:
            state, deltas = boosting_step(state, t)
            for d in deltas:
                if d.ens_formula is not None:
                    n_formula += 1
                    formula_exact &= d.ens_formula == d.ens
        _, K_batch = batch_cooccurrence(trees, eta, max_dim=2)
        keys = set(K_batch) | set(state.K)
        worst_k = max(worst_k, max(abs(float(state.K.get(s, Fraction(-1)) - K_batch.get(s, Fraction(-2)))) for s in keys))
        rows = monitor(state)
        baseline_ok &= all(v == 1.0 for k, v in rows[0].items() if k.startswith("ratio_")) and rows[0]["health"] == 1.0
        refined = state.ensemble.refined
        total = sum(refined.cell_volume(c) for c in refined.ids)
        x = domain.sample(20_000, np.random.default_rng(trial))
        frac = float(np.mean(refined.locate(x) >= 0))
        sigma = math.sqrt(max(frac * (1 - frac), 0.0) / len(x))
        z = abs(total - domain.volume * frac) / max(domain.volume * sigma, 1e-12)
        worst_z = max(worst_z, z if abs(total - domain.volume) > 1e-9 else 0.0)
    ok = worst_k <= 1e-12 and formula_exact and n_formula > 0 and baseline_ok and worst_z <= 3.0
    record(9, ok, f"max |K_inc - K_batch|={worst_k:.3g} delta formula exact={formula_exact} ({n_formula} entries) "
                  f"baseline ratios=1: {baseline_ok} volume z={worst_z:.2f}")


# 10 ------------------------------------------------------------------------

def _image_mc(dom, layers, sig, J, b, n_samples, rng):
    """Measure of ``J Q + b`` by sampling its bounding box and pulling points back.

    A pulled-back point lies in ``Q`` when it is inside the box ``dom`` and
    the forward pass through ``layers`` reproduces the signature ``sig``.
    """
    corners = np.array(list(itertools.product(*dom.tolist())))
    img = corners @ J.T + b
    lo, hi = img.min(axis=0), img.max(axis=0)
    box_vol = float(np.prod(hi - lo))
    y = rng.uniform(lo, hi, size=(n_samples, len(lo)))
    x = np.linalg.solve(J, (y - b).T).T
    inside = np.all((x >= dom[:, 0]) & (x <= dom[:, 1]), axis=1)
    hit = np.zeros(n_samples, dtype=bool)
    idx = np.flatnonzero(inside)
    if idx.size:
        h = x[idx]
        ok = np.ones(idx.size, dtype=bool)
        for layer, pat in zip(layers, sig):
            ok &= np.all(layer.patterns(h) == np.array(pat), axis=1)
            h = layer(h)
        hit[idx] = ok
    frac = hit.mean()
    return box_vol * frac, box_vol * math.sqrt(frac * (1 - frac) / n_samples)


def _z(value, est, se):
    if se > 0:
        return abs(value - est) / se
    return 0.0 if abs(value - est) < 1e-12 else math.inf


def test_criterion_10_neural_net():
    rng = np.random.default_rng(10)
    domain = Domain(((0.0, 1.0), (0.0, 1.0)))
    lemma_ok = True
    map_ok = True
    chain_bad = 0
    worst_z = 0.0
    n_checked = 0
    for trial in range(20):
        layers = random_net(rng, int(rng.integers(2, 4)), last=2 if trial % 2 == 0 else None)
        X = rng.uniform(size=(200, 2))
        seq = backward_sequence(layers, domain, X)
        for l in range(len(layers)):
            lev, nxt = seq.levels[l], seq.levels[l + 1]
            chk = lemma_check(lev.refined, seq.activation[l], nxt.partition, n_samples=20_000, seed=trial)
            lemma_ok &= chk["ok"]
            try:
                verify_simplicial_map(lev.complex, nxt.complex, lev.vertex_map)
            except Exception:
                map_ok = False
        for i in range(len(X)):
            chain = locate_chain(seq, i)
            for l, q in enumerate(chain[:-1]):
                if seq.levels[l].signatures[q] != seq.signature(i, l) or seq.levels[l].vertex_map[q] != chain[l + 1]:
                    chain_bad += 1
        for l, layer in enumerate(layers):
            lev, act = seq.levels[l], seq.activation[l]
            for q, (a, beta) in lev.refined.pairs.items():
                pat = act.patterns[a]
                pb = pullback_volume(act.partition.cell(a).geometry, pat, seq.levels[l + 1].partition.cell(beta).geometry,
                                     layer, seq.domains[l], seq.domains[l + 1])
                if pb.method != "exact":
                    continue
                Wa, ba = layer.affine(pat)
                est, se = _image_mc(seq.domains[l].array, layers[l:], lev.signatures[q], Wa, ba,
                                    200_000, np.random.default_rng([trial, l, q]))
                worst_z = max(worst_z, _z(pb.value, est, se))
                n_checked += 1
        for q in seq.levels[0].partition.ids:
            pb = composed_pullback(seq, q)
            if pb.method != "exact":
                continue
            J, b = composed_affine(seq, q)
            est, se = _image_mc(seq.domains[0].array, layers, seq.levels[0].signatures[q], J, b,
                                200_000, np.random.default_rng([trial, 99, q]))
            worst_z = max(worst_z, _z(pb.value, est, se))
            n_checked += 1
    ok = lemma_ok and map_ok and chain_bad == 0 and n_checked > 0 and worst_z <= 3.0
    record(10, ok, f"lemma={lemma_ok} simplicial maps={map_ok} chain mismatches={chain_bad} "
                   f"pullback cells={n_checked} max z={worst_z:.2f}")


# 11 ------------------------------------------------------------------------

def _runs(tmp_path):
    fx = nio.fixture_path
    tree, pts = str(fx("tree_example.json")), str(fx("tree_points.csv"))
    return {
        "nerve": ["nerve", str(fx("two_neuron.json"))],
        "metric": ["metric", tree],
        "spline": ["spline", tree, "--penalty", "0,1,0.5"],
        "density": ["density", tree, "--data", pts, "--lambda-density", "0.1"],
        "curvature": ["curvature", tree, "--data", pts],
        "ensemble": ["ensemble", str(fx("ensemble_example.json"))],
        "boost-monitor": ["boost-monitor", str(fx("ensemble_example.json"))],
        "nn-analyze": ["nn-analyze", "--weights", str(fx("two_neuron_net.json")),
                       "--data", str(fx("two_neuron_points.csv")), "--domain", "file"],
        "report": ["report", tree, "--data", pts],
    }


def test_criterion_11_determinism(tmp_path):
    differing = []
    for name, argv in _runs(tmp_path).items():
        outs = []
        for k in range(2):
            d = tmp_path / f"{name}-{k}"
            code = cli.run(argv + ["--out", str(d), "--seed", "11"])
            assert code == 0, name
            outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        if outs[0] != outs[1]:
            differing.append(name)
    record(11, not differing, f"subcommands with differing output: {differing or 'none'}")
