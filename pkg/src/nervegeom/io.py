"""Reading partitions, networks and datasets; deterministic JSON and CSV output."""

from __future__ import annotations

import csv
import io
import json
import math
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import jsonschema
import numpy as np

from .errors import InputError, ParseError
from .nn import LayerSpec
from .partition import Box, Domain, GeometryConfig, HPolytope, Partition, PartitionCell, Predictor

PathLike = Union[str, Path]


@lru_cache(maxsize=None)
def schema(name: str) -> Dict[str, Any]:
    """Bundled JSON schema ``name`` (``partition``, ``network`` or ``ensemble``)."""
    text = resources.files("nervegeom").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture file."""
    return Path(str(resources.files("nervegeom").joinpath("fixtures", name)))


def _load_json(source: Union[PathLike, Mapping]) -> Any:
    if isinstance(source, Mapping):
        return source
    try:
        return json.loads(Path(source).read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {source}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: invalid JSON ({exc})") from None


def validate(doc: Any, name: str) -> None:
    try:
        jsonschema.validate(doc, schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParseError(f"{name} document invalid at {where}: {exc.message}") from None


def _predictor(doc: Optional[Mapping]) -> Optional[Predictor]:
    if doc is None:
        return None
    if "constant" in doc:
        return Predictor.const(doc["constant"])
    return Predictor.affine(doc["W"], doc["b"])


def partition_from_dict(doc: Mapping, config: Optional[GeometryConfig] = None) -> Partition:
    """Partition from a parsed document (schema-checked)."""
    validate(doc, "partition")
    try:
        domain = Domain(tuple(tuple(b) for b in doc["domain"]))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    cells = []
    for c in doc["cells"]:
        if "box" in c:
            geo = Box(tuple(tuple(b) for b in c["box"]))
        else:
            hs = c["halfspaces"]
            if len(hs["W"]) != len(hs["b"]):
                raise InputError(f"cell {c['id']}: halfspace W and b lengths differ")
            geo = HPolytope(tuple(tuple(r) for r in hs["W"]), tuple(hs["b"]))
        cells.append(PartitionCell(int(c["id"]), geo, _predictor(c.get("predictor"))))
    if config is None:
        g = doc.get("geometry", {})
        config = GeometryConfig(g.get("tol", 1e-9), g.get("mc_samples", 10**6), g.get("seed", 0))
    index = {int(k): list(v) for k, v in doc.get("data_index", {}).items()}
    return Partition(domain, cells, index or None, config)


def load_partition(path: Union[PathLike, Mapping], config: Optional[GeometryConfig] = None) -> Partition:
    return partition_from_dict(_load_json(path), config)


def partition_to_dict(partition: Partition) -> Dict[str, Any]:
    """Inverse of :func:`partition_from_dict`."""
    cells = []
    for c in partition.cells:
        d: Dict[str, Any] = {"id": c.id}
        if isinstance(c.geometry, Box):
            d["box"] = [list(b) for b in c.geometry.bounds]
        else:
            d["halfspaces"] = {"W": [list(r) for r in c.geometry.W], "b": list(c.geometry.b)}
        if c.predictor is not None:
            p = c.predictor
            d["predictor"] = {"constant": list(p.constant)} if not p.is_affine else {"W": [list(r) for r in p.W], "b": list(p.b)}
        cells.append(d)
    out: Dict[str, Any] = {"domain": [list(b) for b in partition.domain.bounds], "cells": cells}
    if any(partition.data_index.values()):
        out["data_index"] = {str(k): v for k, v in sorted(partition.data_index.items())}
    return out


def load_network(path: Union[PathLike, Mapping]) -> Tuple[List[LayerSpec], Optional[Domain]]:
    """Layers (and optional domain) from a layered JSON document."""
    doc = _load_json(path)
    validate(doc, "network")
    if not doc["layers"]:
        raise InputError("network has no layers")
    layers = []
    for i, l in enumerate(doc["layers"]):
        widths = {len(r) for r in l["W"]}
        if len(widths) != 1:
            raise InputError(f"layer {i}: ragged weight matrix")
        layers.append(LayerSpec(tuple(tuple(r) for r in l["W"]), tuple(l["b"])))
    domain = Domain(tuple(tuple(b) for b in doc["domain"])) if "domain" in doc else None
    return layers, domain


def load_ensemble(path: Union[PathLike, Mapping], config: Optional[GeometryConfig] = None) -> Tuple[List[Partition], Optional[float]]:
    doc = _load_json(path)
    validate(doc, "ensemble")
    if not doc["trees"]:
        raise InputError("ensemble has no trees")
    return [partition_from_dict(t, config) for t in doc["trees"]], doc.get("eta")


def load_dataset(path: PathLike) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Feature matrix from ``x0, x1, ...`` columns and the optional ``y`` column."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    xcols = sorted((int(h[1:]), i) for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit())
    if not xcols or [k for k, _ in xcols] != list(range(len(xcols))):
        raise ParseError(f"{path}: feature columns must be x0..x(n-1)")
    ycol = header.index("y") if "y" in header else None
    X, y = [], []
    for ln, r in enumerate(rows[1:], start=2):
        if not r or all(not v.strip() for v in r):
            continue
        try:
            X.append([float(r[i]) for _, i in xcols])
            if ycol is not None:
                y.append(float(r[ycol]))
        except (ValueError, IndexError):
            raise ParseError(f"{path}:{ln}: non-numeric or missing value") from None
    X = np.array(X, dtype=float).reshape(-1, len(xcols))
    if not np.all(np.isfinite(X)) or (y and not np.all(np.isfinite(y))):
        raise ParseError(f"{path}: values must be finite")
    return X, (np.array(y) if ycol is not None else None)


def write_dataset(path: PathLike, X: np.ndarray, y: Optional[np.ndarray] = None) -> None:
    header = [f"x{i}" for i in range(X.shape[1])] + (["y"] if y is not None else [])
    rows = [header]
    for i, x in enumerate(X):
        rows.append([repr(float(v)) for v in x] + ([repr(float(y[i]))] if y is not None else []))
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    Path(path).write_text(buf.getvalue())


# -- deterministic serialization -----------------------------------------

def _key(k: Any) -> str:
    if isinstance(k, tuple):
        return ",".join(str(int(x)) for x in k)
    if isinstance(k, (np.integer,)):
        return str(int(k))
    return str(k)


def plain(obj: Any) -> Any:
    """Convert to JSON-ready values: NaN to null, infinities to strings, -0 to 0."""
    if isinstance(obj, Mapping):
        return {_key(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x + 0.0
    if hasattr(obj, "__dataclass_fields__"):
        return plain({k: getattr(obj, k) for k in obj.__dataclass_fields__})
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(obj: Any) -> str:
    """Canonical JSON text: sorted keys, shortest round-trip floats, trailing newline."""
    return json.dumps(plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: PathLike, obj: Any) -> None:
    Path(path).write_text(dumps(obj))


def csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """CSV with floats written as shortest round-trip decimals."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        out = []
        for v in r:
            v = plain(v)
            out.append("" if v is None else (repr(v) if isinstance(v, float) else v))
        w.writerow(out)
    return buf.getvalue()
