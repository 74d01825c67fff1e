"""Command-line interface: ``sparsefof simulate | fit | path | evaluate``.

Settings come from built-in defaults, then an optional JSON file given by
``--config``, then command-line flags; later sources win. Exit codes are 0
on success, 1 on runtime or solver failures and 2 on usage or validation
errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .estimators import FunctionOnFunctionRegressor, ScalarOnFunctionRegressor
from .functional import CurveSet
from .io import (
    CoefficientSet,
    Dataset,
    read_coefficients,
    read_dataset,
    validate,
    write_coefficients,
    write_dataset,
    write_json,
)
from .simulation import GroundTruth, ScenarioConfig, evaluate, gen_scenario

logger = logging.getLogger("sparsefof")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    # None: take the mode recorded in the input manifest
    "mode": None,
    "variance_threshold": 0.9,
    "k_max": 10,
    "k": None,
    "alpha": 0.2,
    "criterion": "gcv",
    "adaptive": "none",
    "cv_folds": 5,
    "n_lambda": 50,
    "c_min": 0.01,
    "max_selected": None,
    "lambda1": None,
    "lambda2": None,
    "tol": 1e-6,
    "sigma0": None,
    "sigma_growth": 5.0,
    "seed": 0,
    "threads": None,
    "input": None,
    "output": None,
}


class UsageError(Exception):
    """Invalid arguments or inputs; maps to exit code 2."""


def _add_model_flags(sp, single: bool):
    sp.add_argument("--input", help="dataset or scenario manifest (a scenario uses its training split)")
    sp.add_argument("--output", help="output directory")
    sp.add_argument("--config", help="JSON file of settings; flags override it")
    sp.add_argument("--mode", choices=["function-on-function", "scalar"])
    sp.add_argument("--variance-threshold", type=float)
    sp.add_argument("--k-max", type=int)
    sp.add_argument("--k", type=int, help="fixed basis size (overrides the variance threshold)")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--sigma0", type=float)
    sp.add_argument("--sigma-growth", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    if single:
        sp.add_argument("--lambda1", type=float, help="group penalty level")
        sp.add_argument("--lambda2", type=float, help="ridge penalty level")
    else:
        sp.add_argument("--criterion", choices=["gcv", "cv"])
        sp.add_argument("--adaptive", choices=["none", "full", "soft"])
        sp.add_argument("--cv-folds", type=int)
        sp.add_argument("--n-lambda", type=int)
        sp.add_argument("--c-min", type=float)
        sp.add_argument("--max-selected", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsefof", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic scenario")
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--p", type=int, required=True)
    sim.add_argument("--p0", type=int, required=True)
    sim.add_argument("--snr", type=float, default=10.0)
    sim.add_argument("--regime", choices=["easy", "difficult"], default="easy")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--m", type=int, default=100, help="grid points")
    sim.add_argument("--format", choices=["csv", "binary"], default="csv")
    sim.add_argument("--output", required=True)
    sim.add_argument("--threads", type=int)

    _add_model_flags(sub.add_parser("fit", help="solve at one (lambda1, lambda2) pair"), single=True)
    _add_model_flags(sub.add_parser("path", help="penalty path search with model selection"), single=False)

    ev = sub.add_parser("evaluate", help="score an estimate against a simulated truth")
    ev.add_argument("--estimate", required=True, help="run directory or coefficient-set directory")
    ev.add_argument("--scenario", required=True, help="scenario manifest or directory")
    ev.add_argument("--output", help="write the metrics JSON here as well")
    return parser


def resolve_config(args) -> dict:
    """Merge defaults, the ``--config`` file and explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            from_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        validate(from_file, "config")
        cfg.update(from_file)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["input"] is None or cfg["output"] is None:
        raise UsageError("--input and --output are required (as flags or in the config file)")
    document = {k: v for k, v in cfg.items() if v is not None}
    validate(document, "config")
    return cfg


def _scenario_manifest_path(path) -> Path:
    path = Path(path)
    return path / "manifest.json" if path.is_dir() else path


def _load_input(path, mode) -> Dataset:
    manifest_path = _scenario_manifest_path(path)
    if not manifest_path.exists():
        raise UsageError(f"no manifest at {manifest_path}")
    doc = json.loads(manifest_path.read_text())
    if "train" in doc and "truth" in doc:
        manifest_path = manifest_path.parent / doc["train"]
    return read_dataset(manifest_path, mode)


def _make_estimator(cfg, command, names):
    common = dict(
        variance_threshold=cfg["variance_threshold"],
        k_max=cfg["k_max"],
        alpha=cfg["alpha"],
        n_lambda=cfg["n_lambda"],
        c_min=cfg["c_min"],
        criterion=cfg["criterion"],
        cv_folds=cfg["cv_folds"],
        adaptive=cfg["adaptive"] if command == "path" else "none",
        max_selected=cfg["max_selected"],
        tol=cfg["tol"],
        sigma0=cfg["sigma0"],
        sigma_growth=cfg["sigma_growth"],
        random_state=cfg["seed"],
        feature_names=names,
    )
    if command == "fit":
        if cfg["lambda1"] is None or cfg["lambda2"] is None:
            raise UsageError("fit needs --lambda1 and --lambda2")
        common["penalty"] = (cfg["lambda1"], cfg["lambda2"])
    if cfg["mode"] == "scalar":
        return ScalarOnFunctionRegressor(k=cfg["k"], **common)
    return FunctionOnFunctionRegressor(n_components=cfg["k"], **common)


def _diagnostic_lines(path):
    phases = []
    if path.initial is not None and path.adaptive == "full":
        phases.append(("initial", path.initial.records))
        phases.append(("adaptive", path.records))
    else:
        phases.append(("initial", path.records))
    if path.final is not None:
        phases.append(("final", [path.final]))
    for phase, records in phases:
        for point, rec in enumerate(records):
            for it, h in enumerate(rec.history):
                yield {"phase": phase, "point": point, "c_lambda": rec.c_lambda, "iteration": it, **h}


def _summary_table(names, est, cfg) -> str:
    lines = [f"mode={cfg['mode']}  k={est.k_}  criterion={est.path_.criterion}  adaptive={est.path_.adaptive}"]
    best = est.path_.best
    lines.append(f"best c_lambda={best.c_lambda:.4g}  lambda1={best.lambda1:.4g}  lambda2={best.lambda2:.4g}")
    lines.append(f"{'feature':<16}{'coef norm':>14}")
    w = est.grid_.weights
    blocks = est.surfaces_ if cfg["mode"] != "scalar" else est.curves_
    for j, b in zip(est.selected_, blocks):
        if b.ndim == 2:
            nrm = float(np.sqrt(np.einsum("s,t,st->", w, w, b * b)))
        else:
            nrm = float(np.sqrt(np.sum(w * b * b)))
        lines.append(f"{names[j]:<16}{nrm:>14.6g}")
    if not len(est.selected_):
        lines.append("(no feature selected)")
    return "\n".join(lines)


def cmd_model(args, command: str) -> int:
    cfg = resolve_config(args)
    data = _load_input(cfg["input"], cfg["mode"])
    cfg["mode"] = data.mode
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    est = _make_estimator(cfg, command, data.feature_names)
    y = data.response.ravel() if data.mode == "scalar" else data.response
    t0 = time.perf_counter()
    with threadpool_limits(limits=cfg["threads"]):
        est.fit(data.feature_array(), y)
    elapsed = 1e3 * (time.perf_counter() - t0)

    path_doc = est.path_.to_dict()
    write_json(out / "path.json", path_doc, "path")
    blocks = est.curves_ if data.mode == "scalar" else est.surfaces_
    coefs = CoefficientSet(
        data.feature_names,
        est.selected_,
        blocks,
        est.intercept_,
        data.mode,
        {"k": int(est.k_), "elapsed_ms": elapsed, "source": "estimate"},
    )
    write_coefficients(out, coefs)
    with open(out / "diagnostics.jsonl", "w") as fh:
        for line in _diagnostic_lines(est.path_):
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    manifest = {
        "schema_version": "1.0",
        "command": command,
        "mode": data.mode,
        "input": str(cfg["input"]),
        "config": {k: v for k, v in cfg.items() if k not in ("input", "output")},
        "k": int(est.k_),
        "selected": [data.feature_names[j] for j in est.selected_],
        "elapsed_ms": elapsed,
        "files": {
            "path": "path.json",
            "coefficients": "coefficients.json",
            "blocks": "blocks",
            "intercept": "intercept.csv",
            "diagnostics": "diagnostics.jsonl",
        },
        "package_version": __version__,
    }
    write_json(out / "manifest.json", manifest, "run")
    print(_summary_table(data.feature_names, est, cfg))
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        config = ScenarioConfig(
            n=args.n, p=args.p, p0=args.p0, snr=args.snr, regime=args.regime, seed=args.seed, m=args.m
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.output)
    with threadpool_limits(limits=args.threads):
        sc = gen_scenario(config)
    names = sc.feature_names
    for split, feats, resp in (
        ("train", sc.train_features, sc.train_response),
        ("test", sc.test_features, sc.test_response),
    ):
        data = Dataset([f.values for f in feats], resp.values, sc.grid, names)
        write_dataset(out / split, data, args.format, {"split": split})
    truth = sc.truth
    truth_coefs = CoefficientSet(
        names,
        truth.active,
        truth.surfaces,
        np.zeros(sc.grid.m),
        "function-on-function",
        {"source": "truth"},
    )
    write_coefficients(out / "truth", truth_coefs)
    manifest = {
        "schema_version": "1.0",
        "config": {
            "n": config.n,
            "p": config.p,
            "p0": config.p0,
            "snr": config.snr,
            "regime": config.regime,
            "seed": config.seed,
            "m": config.m,
        },
        "n": config.n,
        "n_test": config.n_test,
        "m": config.m,
        "p": config.p,
        "p0": config.p0,
        "active": [names[j] for j in truth.active],
        "noise_variance": truth.noise_variance,
        "bumps": {names[j]: [list(b) for b in bumps] for j, bumps in zip(truth.active, truth.bumps)},
        "train": "train/manifest.json",
        "test": "test/manifest.json",
        "truth": "truth",
    }
    write_json(out / "manifest.json", manifest, "scenario")
    print(f"wrote scenario to {out} (n={config.n}, n_test={config.n_test}, p={config.p}, p0={config.p0})")
    return EXIT_OK


def load_scenario(path):
    """``(manifest, test Dataset, GroundTruth)`` of a simulated scenario on disk."""
    manifest_path = _scenario_manifest_path(path)
    if not manifest_path.exists():
        raise UsageError(f"no scenario manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    validate(manifest, "scenario")
    root = manifest_path.parent
    test = read_dataset(root / manifest["test"])
    truth_coefs = read_coefficients(root / manifest["truth"])
    truth = GroundTruth(
        active=np.asarray(truth_coefs.selected, dtype=int),
        surfaces=np.asarray(truth_coefs.blocks).reshape(len(truth_coefs.selected), test.grid.m, test.grid.m),
        y_true=None,
        noise_variance=float(manifest["noise_variance"]),
        p=int(manifest["p"]),
    )
    return manifest, test, truth


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    est_dir = Path(args.estimate)
    if not (est_dir / "coefficients.json").exists():
        raise UsageError(f"no coefficients.json in {est_dir}")
    coefs = read_coefficients(est_dir)
    if coefs.mode != "function-on-function":
        raise UsageError("evaluate compares coefficient surfaces; scalar estimates are not supported")
    _, test, truth = load_scenario(args.scenario)
    if tuple(coefs.feature_names) != tuple(test.feature_names):
        raise UsageError("estimate and scenario have different feature names")
    metrics = evaluate(
        coefs.selected,
        coefs.blocks,
        coefs.intercept,
        truth,
        test.curve_sets(),
        CurveSet(test.response, test.grid),
    )
    metrics.elapsed_ms = coefs.info.get("elapsed_ms", 1e3 * (time.perf_counter() - t0))
    doc = metrics.to_dict()
    validate(doc, "metrics")
    text = json.dumps(doc, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        return cmd_model(args, args.command)
    except (UsageError, ValueError, jsonschema.ValidationError, FileNotFoundError) as exc:
        message = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(f"sparsefof: error: {message}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # solver or IO failure
        print(f"sparsefof: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
