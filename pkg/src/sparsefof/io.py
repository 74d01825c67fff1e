"""On-disk formats for curve data, coefficient sets and run outputs.

A dataset is a directory with ``manifest.json`` describing ``n`` curves on
``m`` equispaced points of ``[grid_start, grid_end]`` for ``p`` features and
one response. Curves are stored either as headerless CSV (rows = samples)
or packed little-endian float64 (``features.bin`` in feature-major order
``p x n x m``, ``response.bin`` as ``n x m``).

A coefficient set is a directory with ``coefficients.json``, one
``blocks/<name>.csv`` per selected feature and ``intercept.csv``.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .functional import CurveSet, Grid

__all__ = [
    "SCHEMA_VERSION",
    "Dataset",
    "CoefficientSet",
    "load_schema",
    "validate",
    "read_csv_matrix",
    "write_csv_matrix",
    "read_dataset",
    "write_dataset",
    "read_coefficients",
    "write_coefficients",
    "write_json",
]

SCHEMA_VERSION = "1.0"
_DTYPE = np.dtype("<f8")


def load_schema(name: str) -> dict:
    """Bundled JSON schema ``schemas/<name>.schema.json``."""
    text = resources.files("sparsefof").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(document: dict, name: str) -> None:
    """Raise :class:`jsonschema.ValidationError` unless ``document`` matches schema ``name``."""
    jsonschema.validate(document, load_schema(name))


def write_json(path, document: dict, schema: str | None = None) -> None:
    if schema is not None:
        validate(document, schema)
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")


def read_csv_matrix(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite entries")
    return data


def write_csv_matrix(path, values) -> None:
    # repr-precision so a round trip is exact
    np.savetxt(path, np.atleast_2d(np.asarray(values, dtype=float)), delimiter=",", fmt="%.17g")


class Dataset:
    """Feature curves ``features`` (list of ``n x m``) and ``response`` on one grid.

    ``response`` is ``n x m`` for curve responses and ``n x 1`` for scalar ones.
    """

    def __init__(self, features, response, grid: Grid, feature_names=None, mode="function-on-function"):
        self.features = [np.asarray(f, dtype=float) for f in features]
        self.response = np.asarray(response, dtype=float)
        if self.response.ndim == 1:
            self.response = self.response[:, None]
        self.grid = grid
        self.mode = mode
        p = len(self.features)
        self.feature_names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(p))
        if len(self.feature_names) != p or len(set(self.feature_names)) != p:
            raise ValueError("feature names must be unique, one per feature")
        n = self.response.shape[0]
        for f in self.features:
            if f.shape != (n, grid.m):
                raise ValueError(f"feature of shape {f.shape}, expected {(n, grid.m)}")
        if mode == "function-on-function" and self.response.shape[1] != grid.m:
            raise ValueError("curve responses must be sampled on the feature grid")
        if mode == "scalar" and self.response.shape[1] != 1:
            raise ValueError("scalar responses must form a single column")

    @property
    def n(self) -> int:
        return self.response.shape[0]

    @property
    def p(self) -> int:
        return len(self.features)

    def feature_array(self) -> np.ndarray:
        """Features as ``n x p x m``."""
        return np.stack(self.features, axis=1)

    def curve_sets(self):
        return [CurveSet(f, self.grid) for f in self.features]


def _grid_from(manifest) -> Grid:
    m = int(manifest["m"])
    return Grid(np.linspace(float(manifest["grid_start"]), float(manifest["grid_end"]), m))


def read_dataset(path, mode: str | None = None) -> Dataset:
    """Load a dataset from its directory or its ``manifest.json``.

    ``mode`` overrides the manifest's own ``mode`` entry.
    """
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    validate(manifest, "dataset")
    grid = _grid_from(manifest)
    n, m, p = int(manifest["n"]), grid.m, int(manifest["p"])
    mode = mode or manifest.get("mode", "function-on-function")
    width = 1 if mode == "scalar" else m
    if manifest["format"] == "binary":
        feats = np.fromfile(root / manifest["features"], dtype=_DTYPE)
        if feats.size != p * n * m:
            raise ValueError(f"{manifest['features']}: expected {p * n * m} values, found {feats.size}")
        features = list(feats.reshape(p, n, m).astype(float))
        response = np.fromfile(root / manifest["response"], dtype=_DTYPE)
        if response.size != n * width:
            raise ValueError(f"{manifest['response']}: expected {n * width} values, found {response.size}")
        response = response.reshape(n, width).astype(float)
    else:
        if len(manifest["features"]) != p:
            raise ValueError("manifest lists a different number of feature files than p")
        features = [read_csv_matrix(root / f) for f in manifest["features"]]
        response = read_csv_matrix(root / manifest["response"])
        if response.shape[0] == 1 and n > 1 and mode == "scalar":
            response = response.T
    for f in features:
        if f.shape != (n, m):
            raise ValueError(f"feature file of shape {f.shape}, expected {(n, m)}")
    return Dataset(features, response, grid, manifest["feature_names"], mode)


def write_dataset(path, data: Dataset, fmt: str = "csv", extra: dict | None = None) -> Path:
    """Write ``data`` under directory ``path``; returns the manifest path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "n": data.n,
        "m": data.grid.m,
        "p": data.p,
        "grid_start": float(data.grid.points[0]),
        "grid_end": float(data.grid.points[-1]),
        "feature_names": list(data.feature_names),
        "mode": data.mode,
        "format": fmt,
    }
    if fmt == "binary":
        np.ascontiguousarray(np.stack(data.features), dtype=_DTYPE).tofile(root / "features.bin")
        np.ascontiguousarray(data.response, dtype=_DTYPE).tofile(root / "response.bin")
        manifest["features"] = "features.bin"
        manifest["response"] = "response.bin"
    elif fmt == "csv":
        (root / "features").mkdir(exist_ok=True)
        files = []
        for name, f in zip(data.feature_names, data.features):
            rel = f"features/{name}.csv"
            write_csv_matrix(root / rel, f)
            files.append(rel)
        write_csv_matrix(root / "response.csv", data.response)
        manifest["features"] = files
        manifest["response"] = "response.csv"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if extra:
        manifest.update(extra)
    out = root / "manifest.json"
    write_json(out, manifest, "dataset")
    return out


class CoefficientSet:
    """Coefficients of the selected features on the original scale.

    ``blocks[i]`` belongs to ``selected[i]``: an ``m x m`` surface indexed
    ``[s, t]`` for curve responses, a length-``m`` curve for scalar ones.
    """

    def __init__(self, feature_names, selected, blocks, intercept, mode="function-on-function", info=None):
        self.feature_names = tuple(feature_names)
        self.selected = [int(j) for j in selected]
        self.blocks = [np.asarray(b, dtype=float) for b in blocks]
        self.intercept = np.atleast_1d(np.asarray(intercept, dtype=float))
        self.mode = mode
        self.info = dict(info or {})
        if len(self.blocks) != len(self.selected):
            raise ValueError("one coefficient block per selected feature")


def write_coefficients(path, coefs: CoefficientSet) -> None:
    root = Path(path)
    (root / "blocks").mkdir(parents=True, exist_ok=True)
    names = coefs.feature_names
    for j, b in zip(coefs.selected, coefs.blocks):
        write_csv_matrix(root / "blocks" / f"{names[j]}.csv", b)
    write_csv_matrix(root / "intercept.csv", coefs.intercept)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "mode": coefs.mode,
        "feature_names": list(names),
        "selected": [names[j] for j in coefs.selected],
        "selected_index": coefs.selected,
        **coefs.info,
    }
    write_json(root / "coefficients.json", doc, "coefficients")


def read_coefficients(path) -> CoefficientSet:
    root = Path(path)
    doc = json.loads((root / "coefficients.json").read_text())
    validate(doc, "coefficients")
    names = doc["feature_names"]
    index = {name: j for j, name in enumerate(names)}
    selected, blocks = [], []
    for name in doc["selected"]:
        if name not in index:
            raise ValueError(f"selected feature {name!r} is not among the feature names")
        selected.append(index[name])
        b = read_csv_matrix(root / "blocks" / f"{name}.csv")
        blocks.append(b.ravel() if doc["mode"] == "scalar" else b)
    intercept = read_csv_matrix(root / "intercept.csv").ravel()
    info = {k: v for k, v in doc.items() if k not in ("schema_version", "mode", "feature_names", "selected", "selected_index")}
    return CoefficientSet(names, selected, blocks, intercept, doc["mode"], info)
