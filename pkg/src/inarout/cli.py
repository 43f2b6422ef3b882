"""Command-line interface: simulate, fit, test, detect, study.

Every command prints (or writes with ``--output``) a JSON report
``{command, config, results, warnings}``. Exit status is 0 on success, 1 when a
statistic or fit is unavailable, 2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings

import numpy as np

from .bootstrap import DetectionConfig, FitError, run_iterative_detection
from .cls import RankError, fit_cls
from .cml import DomainError, SingularityError, fit_cml
from .detection import DEFAULT_DELTAS, approximate_critical_value, max_statistic, normalize_method, test_at
from .io import ParseError, build_seasonal_covariates, read_counts_csv, read_covariates_csv, write_counts_csv
from .process import (
    ConfigurationError,
    InarModel,
    Intervention,
    LogLinearMean,
    UnsupportedError,
    simulate_contaminated,
)
from .studies import preset, run_study

EXIT_OK, EXIT_UNAVAILABLE, EXIT_USAGE = 0, 1, 2

# documented defaults; a JSON config overrides these and explicit flags override both
DEFAULTS = {
    "common": {"output": None, "threads": 1},
    "simulate": {
        "alpha": [0.5], "lam": 3.0, "n": 200, "burn_in": 500, "intervention": [],
        "seasonal": None, "trend": False, "beta": None, "out": None, "seed": None,
    },
    "fit": {"input": None, "order": 1, "method": "score", "covariates": None, "seasonal": None,
            "trend": False, "intervention": []},
    "test": {"input": None, "order": 1, "method": "F", "tau": None, "delta": None, "deltas": list(DEFAULT_DELTAS),
             "tau_range": None, "level": 0.05, "critical": False, "covariates": None, "seasonal": None,
             "trend": False},
    "detect": {"input": None, "order": 1, "method": "F", "bootstrap": 500, "critical_values": False,
               "seed": None, "level": 0.05, "max_iterations": 10, "deltas": list(DEFAULT_DELTAS),
               "tau_range": None, "covariates": None, "seasonal": None, "trend": False},
    "study": {"kind": "size", "preset": "paper-sm2", "replicates": 2000, "seed": None, "out": None,
              "methods": None, "n": None},
}


class UsageError(Exception):
    pass


def _json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _json_safe(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_json_safe(x) for x in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(x) for x in obj]
    return obj


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_common(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", default=None, help="JSON file with settings (flags take precedence)")
    p.add_argument("--output", default=S, help="write the JSON report here instead of stdout")
    p.add_argument("--threads", type=int, default=S, help="worker count (results do not depend on it)")


def _add_model_input(p):
    S = argparse.SUPPRESS
    p.add_argument("--input", default=S, help="counts CSV: optional header, columns (label?, count)")
    p.add_argument("--order", type=int, default=S, help="autoregressive order p")
    p.add_argument("--covariates", default=S, help="covariate CSV for a log-linear innovation mean")
    p.add_argument("--seasonal", type=float, default=S, metavar="PERIOD",
                   help="log-linear mean with [1, sin, cos] seasonal covariates")
    p.add_argument("--trend", action="store_true", default=S, help="add a t/n trend column to --seasonal")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    ap = argparse.ArgumentParser(prog="inarout", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a (contaminated) Poisson INAR(p) series")
    _add_common(p)
    p.add_argument("--alpha", type=float, nargs="+", default=S)
    p.add_argument("--lam", type=float, default=S, help="constant innovation mean")
    p.add_argument("--beta", type=float, nargs="+", default=S, help="log-linear coefficients (needs --seasonal)")
    p.add_argument("--seasonal", type=float, default=S, metavar="PERIOD")
    p.add_argument("--trend", action="store_true", default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=S)
    p.add_argument("--intervention", nargs=3, action="append", type=float, default=S,
                   metavar=("TAU", "DELTA", "KAPPA"))
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out", default=S, help="counts CSV path")

    p = sub.add_parser("fit", help="fit the clean or contaminated model")
    _add_common(p)
    _add_model_input(p)
    p.add_argument("--method", default=S, help="f (conditional least squares) or score (maximum likelihood)")
    p.add_argument("--intervention", nargs=2, action="append", type=float, default=S, metavar=("TAU", "DELTA"))

    p = sub.add_parser("test", help="test at a known (tau, delta) or scan all candidates")
    _add_common(p)
    _add_model_input(p)
    p.add_argument("--method", default=S)
    p.add_argument("--tau", type=int, default=S)
    p.add_argument("--delta", type=float, default=S)
    p.add_argument("--deltas", type=float, nargs="+", default=S)
    p.add_argument("--tau-range", dest="tau_range", type=int, nargs=2, default=S)
    p.add_argument("--level", type=float, default=S)
    p.add_argument("--critical", action="store_true", default=S,
                   help="judge the maximum by the tabulated approximate critical value")

    p = sub.add_parser("detect", help="iterative detection, classification and correction")
    _add_common(p)
    _add_model_input(p)
    p.add_argument("--method", default=S)
    p.add_argument("--bootstrap", type=int, default=S, metavar="B")
    p.add_argument("--critical-values", dest="critical_values", action="store_true", default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--level", type=float, default=S)
    p.add_argument("--max-iterations", dest="max_iterations", type=int, default=S)
    p.add_argument("--deltas", type=float, nargs="+", default=S)
    p.add_argument("--tau-range", dest="tau_range", type=int, nargs=2, default=S)

    p = sub.add_parser("study", help="Monte Carlo size, power, classification or critical-value study")
    _add_common(p)
    p.add_argument("--kind", default=S, choices=["size", "power", "classification", "critical-values"])
    p.add_argument("--preset", default=S, choices=["paper-sm2", "paper-sm3"])
    p.add_argument("--replicates", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--methods", nargs="+", default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--out", default=S, help="CSV path for the table")
    return ap


def resolve_config(ns: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[ns.command])
    if ns.config:
        try:
            with open(ns.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {ns.command}: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for k, v in vars(ns).items():
        if k not in ("command", "config"):
            cfg[k] = v
    if cfg["threads"] is None or int(cfg["threads"]) < 1:
        raise UsageError("--threads must be at least 1")
    return cfg


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _load_series(cfg):
    if not cfg.get("input"):
        raise UsageError("--input is required")
    return read_counts_csv(cfg["input"])


def _covariates(cfg, n):
    if cfg.get("covariates") and cfg.get("seasonal"):
        raise UsageError("use either --covariates or --seasonal, not both")
    if cfg.get("covariates"):
        X = read_covariates_csv(cfg["covariates"])
        if X.shape[0] < n:
            raise UsageError(f"covariate file has {X.shape[0]} rows, need {n}")
        return X[:n]
    if cfg.get("seasonal"):
        return build_seasonal_covariates(n, cfg["seasonal"], bool(cfg.get("trend")))
    return None


def _refuse_f_regression(method, X):
    if X is not None and method == "F":
        raise UsageError("the F statistic needs a constant innovation mean; use --method score for regression means")


def cmd_simulate(cfg):
    if cfg["seed"] is None:
        raise UsageError("--seed is required for simulate")
    n = int(cfg["n"])
    burn = int(cfg["burn_in"])
    if cfg.get("beta") is not None:
        if not cfg.get("seasonal"):
            raise UsageError("--beta needs --seasonal")
        X = build_seasonal_covariates(n, cfg["seasonal"], bool(cfg.get("trend")))
        rows = np.vstack([np.repeat(X[:1], burn, axis=0), X])
        mean = LogLinearMean(cfg["beta"], rows)
    else:
        mean = float(cfg["lam"])
    model = InarModel(cfg["alpha"], mean)
    ivs = [Intervention(int(t), float(d), float(k)) for t, d, k in cfg["intervention"]]
    y = simulate_contaminated(model, ivs, n, burn, rng=int(cfg["seed"]))
    if cfg.get("out"):
        write_counts_csv(y, cfg["out"])
    return {"n": n, "counts": y.values.tolist(), "out": cfg.get("out")}, EXIT_OK


def cmd_fit(cfg):
    y = _load_series(cfg)
    method = normalize_method(cfg["method"])
    X = _covariates(cfg, y.n)
    _refuse_f_regression(method, X)
    profiles = [(int(t), float(d)) for t, d in cfg["intervention"]]
    p = int(cfg["order"])
    if method == "F":
        fit = fit_cls(y, p, profiles)
        res = {
            "estimator": "cls",
            "alphas": fit.alphas.tolist(),
            "lambda": fit.lam,
            "kappas": fit.kappas.tolist(),
            "rss": fit.rss,
            "out_of_region": fit.out_of_region,
        }
        return res, EXIT_OK
    fit = fit_cml(y, p, X, profiles)
    res = {"estimator": "cml", **fit.to_dict(), "message": fit.message}
    return res, EXIT_OK if fit.converged else EXIT_UNAVAILABLE


def cmd_test(cfg):
    y = _load_series(cfg)
    method = normalize_method(cfg["method"])
    X = _covariates(cfg, y.n)
    _refuse_f_regression(method, X)
    p = int(cfg["order"])
    level = float(cfg["level"])
    if cfg.get("tau") is not None:
        if cfg.get("delta") is None:
            raise UsageError("--tau needs --delta")
        out = test_at(y, p, int(cfg["tau"]), float(cfg["delta"]), method, level, X)
        return {"mode": "known", **out.to_dict()}, EXIT_OK if out.available else EXIT_UNAVAILABLE
    crit = approximate_critical_value(y.n, method, level) if cfg.get("critical") else None
    res = max_statistic(y, p, cfg["deltas"], cfg.get("tau_range"), method, level, X, critical_value=crit)
    return {"mode": "maximum", **res.to_dict()}, EXIT_OK if res.best.available else EXIT_UNAVAILABLE


def _table3_rows(report):
    rows = []
    for it in report.iterations:
        row = {"iteration": it.index, "method": report.method, "p_value": it.p_value,
               "alpha": None, "lambda": None, "kappa": None, "tau": None, "delta": None}
        src = it.effect_fit if it.effect_fit is not None else it.null.to_dict()
        row["alpha"] = src.get("alphas")
        row["lambda"] = src.get("lambda", src.get("betas"))
        if it.detected is not None:
            row.update(kappa=it.detected.kappa, tau=it.detected.tau, delta=it.detected.delta)
        rows.append(row)
    return rows


def cmd_detect(cfg):
    y = _load_series(cfg)
    method = normalize_method(cfg["method"])
    X = _covariates(cfg, y.n)
    _refuse_f_regression(method, X)
    B = None if cfg.get("critical_values") else int(cfg["bootstrap"])
    if B is not None and cfg.get("seed") is None:
        raise UsageError("--seed is required for the bootstrap (or pass --critical-values)")
    dc = DetectionConfig(
        delta_grid=tuple(cfg["deltas"]), B=B, level=float(cfg["level"]),
        max_iterations=int(cfg["max_iterations"]), seed=cfg.get("seed"),
        tau_range=tuple(cfg["tau_range"]) if cfg.get("tau_range") else None, threads=int(cfg["threads"]),
    )
    report = run_iterative_detection(y, int(cfg["order"]), method, dc, X)
    for w in report.warnings:
        warnings.warn(w)
    res = report.to_dict()
    res["table"] = _table3_rows(report)
    code = EXIT_UNAVAILABLE if report.terminated_reason == "failure" else EXIT_OK
    return res, code


def cmd_study(cfg):
    if cfg.get("seed") is None:
        raise UsageError("--seed is required for study")
    overrides = {"replicates": cfg.get("replicates"), "seed": cfg.get("seed"), "n": cfg.get("n")}
    if cfg.get("methods"):
        overrides["methods"] = tuple(cfg["methods"])
    spec = preset(cfg["preset"], cfg["kind"], **overrides)
    table = run_study(spec, threads=int(cfg["threads"]))
    text = table.to_csv()
    if cfg.get("out"):
        with open(cfg["out"], "w", newline="") as fh:
            fh.write(text)
    return {"out": cfg.get("out"), "rows": len(table.rows), "csv": None if cfg.get("out") else text}, EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "test": cmd_test,
    "detect": cmd_detect,
    "study": cmd_study,
}


def _emit(envelope, path):
    text = json.dumps(_json_safe(envelope), indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        try:
            cfg = resolve_config(ns)
        except UsageError as exc:
            parser.error(str(exc))
    except SystemExit as exc:
        # argparse exits on usage errors (2) and --help (0)
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    # worker count and destination do not affect results, so they are not echoed
    shown = {k: v for k, v in cfg.items() if k not in ("threads", "output")}
    envelope = {"command": ns.command, "config": shown, "results": None, "warnings": []}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            results, code = COMMANDS[ns.command](cfg)
        except (UsageError, ConfigurationError, ParseError, UnsupportedError, RankError, OSError) as exc:
            sys.stderr.write(f"inarout {ns.command}: error: {exc}\n")
            return EXIT_USAGE
        except (FitError, DomainError, SingularityError, np.linalg.LinAlgError) as exc:
            results, code = {"available": False, "error": str(exc)}, EXIT_UNAVAILABLE
    seen = []
    for w in caught:
        msg = str(w.message)
        if msg not in seen:
            seen.append(msg)
    envelope["results"] = results
    envelope["warnings"] = seen
    _emit(envelope, cfg.get("output"))
    return code


if __name__ == "__main__":
    sys.exit(main())
