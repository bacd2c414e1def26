"""``tiltwise`` command-line interface: simulate, analyze, validate."""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import warnings
from pathlib import Path
from unittest import mock

import numpy as np

from . import __version__
from .analysis import Pipeline, analyze
from .config import CI_CHOICES, load_config, replicate_plans, sensitivity_spec
from .dataset import Schema, load_dataset, summarize, write_dataset
from .errors import ConfigError, TiltwiseError
from .estimators import EstimateRow, SensitivityCurve
from .simulate import DgpSpec, generate, oracle

CURVE_COLUMNS = [
    "eta1",
    "eta0",
    "estimand",
    "estimator",
    "point",
    "se",
    "ci_low",
    "ci_high",
    "n_failed_replicates",
    "interval",
]


def fmt(v) -> str:
    """17 significant digits, enough to round-trip any double."""
    return format(float(v), ".17g")


def write_curve_csv(curve: SensitivityCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in curve.rows:
            w.writerow([fmt(r.eta1), fmt(r.eta0), r.estimand, r.estimator, fmt(r.value),
                        fmt(r.se), fmt(r.ci_low), fmt(r.ci_high), r.n_failed_replicates, r.interval])


def read_curve_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                EstimateRow(
                    float(rec["eta1"]),
                    float(rec["eta0"]),
                    rec["estimand"],
                    rec["estimator"],
                    float(rec["point"]),
                    float(rec["se"]),
                    float(rec["ci_low"]),
                    float(rec["ci_high"]),
                    int(rec["n_failed_replicates"]),
                    rec["interval"],
                )
            )
    return rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _versions() -> dict:
    import matplotlib
    import scipy
    import sklearn

    return {
        "tiltwise": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "matplotlib": matplotlib.__version__,
    }


def _apply_overrides(cfg: dict, args) -> dict:
    inf = cfg.setdefault("inference", {})
    if getattr(args, "ci", None):
        inf["ci"] = args.ci
    if getattr(args, "boot_reps", None) is not None:
        inf["boot_reps"] = args.boot_reps
    if getattr(args, "level", None) is not None:
        inf["level"] = args.level
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
        cfg.setdefault("dgp", {})["seed"] = args.seed
    if getattr(args, "plot", None) is not None:
        cfg["plot"] = args.plot
    if getattr(args, "estimators", None):
        cfg.setdefault("sensitivity", {})["estimators"] = args.estimators.split(",")
    if getattr(args, "eta_grid", None):
        cfg.setdefault("sensitivity", {})["eta_grid"] = [float(v) for v in args.eta_grid.split(",")]
    if getattr(args, "n", None) is not None:
        cfg.setdefault("dgp", {})["n"] = args.n
    return cfg


def run_simulate(cfg: dict, out: Path) -> dict:
    spec = DgpSpec.from_mapping(cfg["dgp"])
    d = generate(spec)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(d, out / "data.csv")
    truth = oracle(spec)
    write_json({"dgp": spec.to_dict(), "truth": truth.to_dict(),
                "summary": summarize(d).to_dict()}, out / "truth.json")
    return truth.to_dict()


def run_analyze(cfg: dict, data: Path, out: Path) -> SensitivityCurve:
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        schema = Schema.from_mapping(cfg["schema"])
        d = load_dataset(data, schema)
        spec = sensitivity_spec(cfg)
        plans = replicate_plans(cfg)
        pipe = Pipeline(spec, cfg.get("models", {}), cfg.get("selection") or {})
        curve = analyze(d, pipe, plans)
    write_curve_csv(curve, out / "curves.csv")
    figures = []
    if cfg.get("plot", True):
        from .plotting import plot_curve

        figures = [p.name for p in plot_curve(curve, out)]
    meta = {
        "seed": cfg.get("seed"),
        "n": d.n,
        "summary": summarize(d).to_dict(),
        "models": cfg.get("models"),
        "sensitivity": cfg.get("sensitivity"),
        "selection": cfg.get("selection"),
        "inference": cfg.get("inference"),
        "versions": _versions(),
        "warnings": [str(w.message) for w in caught],
        "figures": figures,
        "data": str(data),
    }
    write_json(meta, out / "metadata.json")
    curve.metadata = meta
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return curve


def run_validate(quick: bool, out: Path | None, corrupt_tilt: bool = False) -> bool:
    from . import estimators
    from .validate import run_checks

    if corrupt_tilt:
        original = estimators.tilted_prob
        with mock.patch.object(estimators, "tilted_prob",
                               lambda g, eta: np.clip(original(g, eta) + 0.01, 0.0, 1.0)):
            results = run_checks(quick)
    else:
        results = run_checks(quick)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("ALL CHECKS PASSED" if ok else "SOME CHECKS FAILED")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json({"passed": ok, "quick": quick, "checks": [r.to_dict() for r in results]},
                   out / "validate.json")
    return ok


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tiltwise", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a dataset and its oracle truths")
    sim.add_argument("--config", help="JSON config with a 'dgp' entry (default: DGP-A)")
    sim.add_argument("--out", default="sim", help="output directory")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--n", type=int)

    an = sub.add_parser("analyze", help="sensitivity curves for a dataset")
    an.add_argument("--config")
    an.add_argument("--data", required=True)
    an.add_argument("--out", default="analysis")
    an.add_argument("--ci", choices=CI_CHOICES)
    an.add_argument("--boot-reps", type=int)
    an.add_argument("--seed", type=int)
    an.add_argument("--level", type=float)
    an.add_argument("--estimators", help="comma-separated subset of om,aug,dr")
    an.add_argument("--eta-grid", help="comma-separated eta values")
    an.add_argument("--plot", dest="plot", action="store_true", default=None)
    an.add_argument("--no-plot", dest="plot", action="store_false")

    va = sub.add_parser("validate", help="run the built-in oracle and invariant checks")
    va.add_argument("--quick", action="store_true")
    va.add_argument("--out")
    va.add_argument("--corrupt-tilt", action="store_true", help=argparse.SUPPRESS)
    return ap


def _fail(exc: Exception, out) -> int:
    payload = exc.to_dict() if isinstance(exc, TiltwiseError) else {
        "error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            write_json(payload, Path(out) / "error.json")
        except OSError:
            pass
    return 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = getattr(args, "out", None)
    try:
        if args.command == "validate":
            return 0 if run_validate(args.quick, Path(out) if out else None, args.corrupt_tilt) else 1
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "simulate":
            truth = run_simulate(cfg, Path(out))
            print(json.dumps(_jsonable(truth)))
            return 0
        if not Path(args.data).exists():
            raise ConfigError(f"data file not found: {args.data}")
        curve = run_analyze(cfg, Path(args.data), Path(out))
        print(f"wrote {len(curve.rows)} rows to {Path(out) / 'curves.csv'}")
        return 0
    except (TiltwiseError, OSError) as exc:
        return _fail(exc, out)


if __name__ == "__main__":
    sys.exit(main())
