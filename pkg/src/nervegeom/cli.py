"""Command-line front end: ``nervegeom <subcommand> ...``.

Every subcommand writes a JSON report (plus CSV plot data) into ``--out``.
Reports embed the run configuration, seed, tool version and every
design selection, and are byte-identical for identical inputs and seed.
"""

from __future__ import annotations

import argparse
import sys
import traceback
import warnings
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from . import io as nio
from .calculus import SplineProblem, hodge_operators, laplacian_spectrum, solve_simplicial_spline
from .density import SCHEMES, density_weighted_graph, estimate_density, interpolate_edge_density
from .ensemble import (
    CooccurrenceTable,
    boosting_step,
    ensemble_metric,
    geometric_energy_log,
    monitor,
    refine_ensemble,
    start_boosting,
    trace_csv,
)
from .errors import InputError, NerveGeomError
from .metric import RiemannianStructure
from .nn import backward_sequence, composed_pullback, enriched_complex, lemma_check
from .partition import Domain, GeometryConfig, Partition, build_nerve, dihedral_cos
from .ricci import CurvatureConfig, config_dict, curvature_report

TOOL = "nervegeom"


def _key(s: Sequence[int]) -> str:
    return ",".join(str(int(v)) for v in s)


def _penalty(text: str) -> Tuple[int, int, float]:
    try:
        p, k, lam = text.split(",")
        return int(p), int(k), float(lam)
    except ValueError:
        raise argparse.ArgumentTypeError(f"penalty must be p,k,lambda (got {text!r})") from None


def _floats(text: str) -> Tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers (got {text!r})") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


# -- shared loading --------------------------------------------------------

def _config(args) -> GeometryConfig:
    return GeometryConfig(args.tol, args.mc_samples, args.seed)


def _partition(args) -> Partition:
    part = nio.load_partition(args.input, _config(args))
    if not part.ids:
        raise InputError("partition has no cells")
    return part


def _with_data(part: Partition, path: Optional[str]) -> Tuple[Partition, Optional[np.ndarray], Optional[np.ndarray]]:
    if path is None:
        return part, None, None
    X, y = nio.load_dataset(path)
    if X.shape[1] != part.n:
        raise InputError(f"data has {X.shape[1]} features but the domain has {part.n}")
    index = part.assign(X)
    return Partition(part.domain, part.cells, index, part.config), X, y


def _structure(part: Partition, max_dim: int) -> RiemannianStructure:
    K, _ = build_nerve(part, max_dim, with_faces=False)
    return RiemannianStructure(part, K, max_dim)


def _cell_means(part: Partition, y: np.ndarray) -> Dict[int, float]:
    out = {}
    for c in part.ids:
        idx = part.data_index.get(c, [])
        if not idx:
            raise InputError(f"cell {c} holds no data; cannot form its observation")
        out[c] = float(np.mean(y[idx]))
    return out


def _predictor_values(part: Partition) -> Dict[int, float]:
    out = {}
    for c in part.ids:
        pred = part.cell(c).predictor
        if pred is None:
            raise InputError(f"cell {c} has no predictor; pass --data with a y column")
        out[c] = float(pred(part.cell_flat(c).point)[0, 0])
    return out


# -- subcommands -------------------------------------------------------------
# Each returns (report body, selections, {csv name: csv text}).

def cmd_nerve(args):
    part = _partition(args)
    K, faces = build_nerve(part, args.max_dim)
    body = {
        "f_vector": K.f_vector(),
        "simplices": {str(p): [list(s) for s in K.simplices(p)] for p in range(K.dim + 1)},
        "volumes": {c: part.cell_volume(c) for c in part.ids},
        "faces": {_key(s): {"dim": f.dim, "measure": f.measure} for s, f in sorted(faces.items())},
        "connected": K.is_connected(),
    }
    rows = [[_key(s), len(s) - 1, f.dim, f.measure] for s, f in sorted(faces.items(), key=lambda kv: (len(kv[0]), kv[0]))]
    return body, {}, {"faces.csv": nio.csv_text(["simplex", "p", "face_dim", "measure"], rows)}


def _metric_body(S: RiemannianStructure) -> Tuple[Dict[str, Any], List[List[Any]]]:
    K = S.complex
    grams: Dict[str, Dict[str, Any]] = {}
    rows = []
    for v in K.vertices:
        per = {}
        for p in range(1, K.dim + 1):
            G, order = S.star_gram((v,), p)
            if not order:
                continue
            per[str(p)] = {"order": [list(s) for s in order], "G": G}
            for i, a in enumerate(order):
                for j, b in enumerate(order):
                    rows.append([v, p, _key(a), _key(b), G[i, j]])
        grams[str(v)] = per
    conditions = {}
    for v in K.vertices:
        try:
            conditions[v] = S.gram_condition(v)
        except InputError:
            conditions[v] = None
    dihedral = {}
    part = S.partition
    for v in K.vertices:
        edges = [e for e in K.cofaces((v,), 1) if S.facet_measure(e) > 0]
        for i, e1 in enumerate(edges):
            for e2 in edges[i + 1:]:
                dihedral[f"{v}|{_key(e1)}|{_key(e2)}"] = dihedral_cos(part, v, part.face(e1), part.face(e2))
    body = {
        "f_vector": K.f_vector(),
        "vertex_inner": {v: S.vertex_inner(v) for v in K.vertices},
        "edge_length": {_key(e): S.edge_length(e) for e in K.simplices(1)},
        "facet_measure": {_key(e): S.facet_measure(e) for e in K.simplices(1)},
        "dihedral_cos": dihedral,
        "grams": grams,
        "condition": conditions,
        "consistency": S.consistency_report(),
    }
    return body, rows


def cmd_metric(args):
    part = _partition(args)
    body, rows = _metric_body(_structure(part, args.max_dim))
    return body, {"off_diagonal_zero_convention": "parallel or non-meeting facets"}, {
        "gram.csv": nio.csv_text(["vertex", "p", "row", "col", "value"], rows)}


def cmd_spline(args):
    part, X, y = _with_data(_partition(args), args.data)
    S = _structure(part, args.max_dim)
    obs = _cell_means(part, y) if y is not None else _predictor_values(part)
    source = "cell mean of y" if y is not None else "predictor at cell centre"
    verts = S.complex.vertices
    yv = np.array([obs[v] for v in verts])
    penalties = list(args.penalty) if args.penalty else [(0, 1, 1.0)]
    res = solve_simplicial_spline(SplineProblem(yv, penalties), S)
    body = {
        "observations": dict(zip(verts, yv)),
        "u": dict(zip(verts, res.u)),
        "residual": res.residual,
        "energy": res.energy,
        "energy_at_y": res.energy_at_y,
        "min_eigenvalue": res.min_eigenvalue,
    }
    rows = [[v, a, b] for v, a, b in zip(verts, yv, res.u)]
    sel = {"penalties": [list(p) for p in penalties], "observations": source}
    return body, sel, {"spline.csv": nio.csv_text(["vertex", "y", "u"], rows)}


def _density(args, part: Partition, S: RiemannianStructure):
    penalties = list(args.penalty) if args.penalty else [(0, 1, 1.0)]
    field = estimate_density(S, lam=args.lambda_density, penalties=penalties)
    field = interpolate_edge_density(field, S, args.density_scheme)
    graph = density_weighted_graph(field, S, args.alpha)
    sel = {"density_scheme": args.density_scheme, "alpha": args.alpha,
           "lambda_density": args.lambda_density, "penalties": [list(p) for p in penalties]}
    return field, graph, sel


def _need_data(args):
    if args.data is None:
        raise InputError(f"{args.command} needs --data")


def cmd_density(args):
    _need_data(args)
    part, X, y = _with_data(_partition(args), args.data)
    S = _structure(part, args.max_dim)
    field, graph, sel = _density(args, part, S)
    counts = {v: len(part.data_index.get(v, [])) for v in S.complex.vertices}
    body = {
        "counts": counts,
        "rho_vertex": field.rho_vertex,
        "rho_edge": {_key(e): r for e, r in sorted(field.rho_edge.items())},
        "edge_length": {_key(e): w for e, w in sorted(graph.lengths.items())},
        "floor": field.floor,
        "clamped": field.clamped,
        "residual": field.residual,
        "normalized_residual": field.normalized_residual,
    }
    rows = [[_key(e), S.edge_length(e), field.rho_edge[e], graph.lengths[e]] for e in sorted(field.rho_edge)]
    return body, sel, {"density_edges.csv": nio.csv_text(["edge", "metric_length", "rho_edge", "weighted_length"], rows)}


def _curvature(args, part, S, X, y):
    field, graph, sel = _density(args, part, S)
    cfg = CurvatureConfig(r_grid=tuple(args.r_grid or ()))
    f = _cell_means(part, y) if y is not None and all(part.data_index.get(c) for c in part.ids) else None
    rep = curvature_report(S, field, graph, f=f, X=X, y=y, config=cfg, workers=args.workers)
    sel.update({"curvature": config_dict(cfg), "r_grid": rep.r_grid, "sphere_band": rep.sphere_band,
                "vertex_function": "cell mean of y" if f is not None else "predictor at cell centre"})
    return rep, field, sel


def cmd_curvature(args):
    _need_data(args)
    part, X, y = _with_data(_partition(args), args.data)
    S = _structure(part, args.max_dim)
    rep, _, sel = _curvature(args, part, S, X, y)
    body = {
        "vertex": rep.vertex,
        "edge": {_key(e): v for e, v in sorted(rep.edge.items())},
        "stat_vertex": rep.stat_vertex,
        "stat_edge": {_key(e): v for e, v in sorted(rep.stat_edge.items())},
        "dbar": rep.dbar,
        "lbar": rep.lbar,
        "R": rep.R,
        "E": rep.E,
        "distribution": rep.distribution,
    }
    rows = []
    for v, rec in sorted(rep.vertex.items()):
        for name, val in sorted(rec.items()):
            if isinstance(val, list):
                for r, x in zip(rep.r_grid, val):
                    rows.append(["vertex", v, name, r, x])
            elif not isinstance(val, bool):
                rows.append(["vertex", v, name, "", val])
    for e, rec in sorted(rep.edge.items()):
        for name, val in sorted(rec.items()):
            rows.append(["edge", _key(e), name, "", val])
    return body, sel, {"curvature.csv": nio.csv_text(["kind", "id", "measure", "r", "value"], rows)}


def _ensemble(args):
    trees, eta = nio.load_ensemble(args.input, _config(args))
    if args.eta is not None:
        eta = args.eta
    return trees, eta


def cmd_ensemble(args):
    trees, eta = _ensemble(args)
    ens = refine_ensemble(trees)
    table = CooccurrenceTable(ens, eta, args.max_dim)
    S = ensemble_metric(ens, table, max_dim=args.max_dim)
    K = S.complex
    cooc = {_key(s): table(s) for p in range(1, K.dim + 1) for s in K.simplices(p)}
    cond = {}
    for v in K.vertices:
        try:
            cond[v] = S.gram_condition(v)
        except InputError:
            cond[v] = None
    gaps = laplacian_spectrum(hodge_operators(S))
    body = {
        "trees": len(trees),
        "refined_cells": len(ens.refined.ids),
        "provenance": {c: list(p) for c, p in sorted(ens.provenance.items())},
        "volumes": {c: ens.refined.cell_volume(c) for c in ens.refined.ids},
        "volume_sum": float(sum(ens.refined.cell_volume(c) for c in ens.refined.ids)),
        "f_vector": K.f_vector(),
        "cooccurrence": cooc,
        "lambdas": S.ensemble.lambdas,
        "condition": cond,
        "E": geometric_energy_log(S),
        "spectral_gaps": gaps,
        "refined": nio.partition_to_dict(ens.refined),
    }
    rows = [[k, v] for k, v in sorted(cooc.items())]
    sel = {"eta": eta, "aggregate": "mean", "lambdas": "mean face volume per dimension"}
    return body, sel, {"cooccurrence.csv": nio.csv_text(["simplex", "K"], rows)}


def cmd_boost_monitor(args):
    trees, eta = _ensemble(args)
    state = start_boosting(trees[0], eta, max_dim=args.max_dim)
    steps = []
    for t in trees[1:]:
        state, deltas = boosting_step(state, t)
        geo = [d.geom for d in deltas]
        ens = [d.ens for d in deltas]
        steps.append({
            "m": state.m,
            "deltas": len(deltas),
            "max_abs_geom": max((abs(x) for x in geo), default=0.0),
            "max_abs_ens": max((abs(x) for x in ens), default=0.0),
            "max_formula_gap": max((abs(d.ens - d.ens_formula) for d in deltas if d.ens_formula is not None), default=0.0),
        })
    rows = monitor(state)
    body = {"trace": rows, "steps": steps, "lambdas": state.lambdas}
    sel = {"eta": eta, "lambdas": "mean face volume of the first tree, fixed", "baseline": 0}
    return body, sel, {"trace.csv": trace_csv(rows)}


def _nn_domain(args, file_domain: Optional[Domain]) -> Optional[Domain]:
    if args.domain == "auto":
        return None
    if args.domain == "file":
        if file_domain is None:
            raise InputError("--domain file but the network document has no domain")
        return file_domain
    raise InputError("--domain must be auto or file")


def cmd_nn_analyze(args):
    if args.weights is None:
        raise InputError("nn-analyze needs --weights")
    _need_data(args)
    layers, file_domain = nio.load_network(args.weights)
    X, _ = nio.load_dataset(args.data)
    cfg = _config(args)
    seq = backward_sequence(layers, _nn_domain(args, file_domain), X, args.max_dim, cfg)
    levels = []
    for l, lev in enumerate(seq.levels):
        entry = {
            "level": l,
            "f_vector": lev.complex.f_vector(),
            "simplices": [list(s) for s in lev.complex.all_simplices()],
            "vertex_map": lev.vertex_map,
            "signatures": {q: [list(p) for p in s] for q, s in sorted(lev.signatures.items())},
        }
        if lev.refined is not None:
            entry["lemma_check"] = lemma_check(lev.refined, seq.activation[l], seq.levels[l + 1].partition,
                                               n_samples=args.lemma_samples, seed=args.seed)
        levels.append(entry)
    K, S, maps = enriched_complex(seq, args.max_dim)
    metric, _ = _metric_body(S)
    vols = {}
    rows = []
    part = seq.levels[0].partition
    for q in part.ids:
        pb = composed_pullback(seq, q)
        vols[q] = {"volume": pb.source_volume, "pullback": pb.value, "det": pb.det, "method": pb.method}
        rows.append([q, len(part.data_index.get(q, [])), pb.source_volume, pb.value, pb.det, pb.method])
    body = {
        "levels": levels,
        "distortion": seq.report,
        "pullback": vols,
        "affine": {q: {"W": W, "b": b} for q, (W, b) in sorted(maps.items())},
        "metric": metric,
        "domain": [list(b) for b in seq.domains[0].bounds],
    }
    sel = {"domain": args.domain, "adjacency": "data-witnessed cells, exact intersection tests",
           "pullback": "|det J| times refined-cell volume"}
    return body, sel, {"volumes.csv": nio.csv_text(["cell", "points", "volume", "pullback", "det", "method"], rows)}


def cmd_report(args):
    part, X, y = _with_data(_partition(args), args.data)
    S = _structure(part, args.max_dim)
    metric, _ = _metric_body(S)
    body: Dict[str, Any] = {
        "f_vector": S.complex.f_vector(),
        "volumes": {c: part.cell_volume(c) for c in part.ids},
        "metric": metric,
        "spectral_gaps": laplacian_spectrum(hodge_operators(S)),
    }
    sel: Dict[str, Any] = {}
    rows = [[c, part.cell_volume(c), len(part.data_index.get(c, []))] for c in part.ids]
    if X is not None:
        rep, field, sel = _curvature(args, part, S, X, y)
        body["curvature"] = {"R": rep.R, "E": rep.E, "distribution": rep.distribution,
                             "stat_vertex": rep.stat_vertex,
                             "stat_edge": {_key(e): v for e, v in sorted(rep.stat_edge.items())}}
        body["density"] = {"rho_vertex": field.rho_vertex,
                           "rho_edge": {_key(e): r for e, r in sorted(field.rho_edge.items())}}
    return body, sel, {"cells.csv": nio.csv_text(["cell", "volume", "points"], rows)}


COMMANDS: Dict[str, Tuple[Callable, str, str]] = {
    "nerve": (cmd_nerve, "nerve.json", "Nerve complex, face dimensions and measures."),
    "metric": (cmd_metric, "metric.json", "Gram matrices, condition numbers and consistency."),
    "spline": (cmd_spline, "spline.json", "Simplicial spline smoothing of cell values."),
    "density": (cmd_density, "density.json", "Density field and density-weighted edge lengths."),
    "curvature": (cmd_curvature, "curvature.json", "Vertex and edge curvature suite."),
    "ensemble": (cmd_ensemble, "ensemble.json", "Refined overlay and co-occurrence metric of a tree ensemble."),
    "boost-monitor": (cmd_boost_monitor, "boost.json", "Per-iteration geometric trace of a boosting sequence."),
    "nn-analyze": (cmd_nn_analyze, "nn.json", "Layer partitions, vertex maps and pullback volumes of a ReLU net."),
    "report": (cmd_report, "report.json", "Combined geometry summary of a partition."),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0, help="seed for every Monte Carlo path")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--max-dim", type=int, default=3)
    common.add_argument("--tol", type=float, default=1e-9)
    common.add_argument("--mc-samples", type=int, default=10**6)
    common.add_argument("--data", help="CSV with columns x0..x(n-1) and optional y")
    common.add_argument("--penalty", type=_penalty, action="append", metavar="p,k,lambda")
    common.add_argument("--density-scheme", choices=SCHEMES, default="arithmetic")
    common.add_argument("--alpha", type=float, default=1.0)
    common.add_argument("--lambda-density", type=float, default=0.0)
    common.add_argument("--r-grid", type=_floats, help="comma-separated radii")
    common.add_argument("--eta", type=float, help="tree weight decay")

    parser = argparse.ArgumentParser(prog=TOOL, description="Geometry of partition-based models.")
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        if name == "nn-analyze":
            p.add_argument("--weights", help="layered network JSON")
            p.add_argument("--domain", default="auto", help="auto or file")
            p.add_argument("--lemma-samples", type=int, default=20_000)
        else:
            p.add_argument("input", help="partition or ensemble JSON")
    return parser


def _meta(args, selections, warns) -> Dict[str, Any]:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "command")}
    return {"tool": TOOL, "version": __version__, "command": args.command, "seed": args.seed,
            "config": cfg, "selections": selections, "warnings": warns}


def _error_record(args, exc: NerveGeomError) -> Dict[str, Any]:
    return {"error": {"kind": exc.kind, "exit_code": exc.exit_code, "message": str(exc)},
            "tool": TOOL, "version": __version__, "command": getattr(args, "command", None)}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out)
    func, name, _ = COMMANDS[args.command]
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.workers < 1 or args.max_dim < 1 or args.mc_samples < 1:
            raise InputError("--workers, --max-dim and --mc-samples must be positive")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            body, selections, csvs = func(args)
        warns = sorted({str(w.message) for w in caught})
        nio.write_json(out / name, {"meta": _meta(args, selections, warns), "result": body})
        for fname, text in csvs.items():
            (out / fname).write_text(text)
    except NerveGeomError as exc:
        record = _error_record(args, exc)
        sys.stderr.write(nio.dumps(record))
        try:
            nio.write_json(out / "error.json", record)
        except OSError:
            pass
        return exc.exit_code
    except Exception as exc:  # unexpected failures are reported as internal errors
        record = {"error": {"kind": "internal", "exit_code": 4, "message": f"{type(exc).__name__}: {exc}",
                            "traceback": traceback.format_exc()},
                  "tool": TOOL, "version": __version__, "command": args.command}
        sys.stderr.write(nio.dumps(record))
        return 4
    return 0


def main(argv: Optional[Sequence[str]] = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
