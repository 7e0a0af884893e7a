"""Command-line interface: estimate, weights, tune, diagnose, simulate.

Every run resolves its configuration (INI config file overridden by flags),
echoes it into the JSON report together with library versions and the seed,
and is bit-reproducible from that echo.  Exit codes: 0 success, 1 usage
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .baselines import (
    cbps_weights,
    eif_weights,
    fit_logistic,
    true_ps_weights,
)
from .data import (
    BasisSpec,
    BasisTerm,
    ColumnRoles,
    DataError,
    Dataset,
    build_basis,
    load_csv,
    polynomial_spec,
    raw_spec,
)
from .diagnostics import tasmd, tune_tolerances
from .estimators import fit_nuisances
from .inference import estimate_with_inference
from .penalties import entropy, quadratic
from .simulation import ALL_METHODS, run_mc
from .twostep import ConvergenceError, fit_two_step, weights_frame

SCHEMA_VERSION = "1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _versions():
    return {
        "medweights": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def _parse_list(value):
    if value is None:
        return ()
    return tuple(s.strip() for s in str(value).split(",") if s.strip())


def _build_parser() -> _Parser:
    p = _Parser(prog="medweights",
                description="Balancing-weight estimation for causal mediation")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="INI config file; flags override")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help="JSON report path (default: stdout)")

    def add_data(sp):
        sp.add_argument("--data", help="CSV file")
        sp.add_argument("--outcome")
        sp.add_argument("--treatment")
        sp.add_argument("--mediators", help="comma-separated mediator columns")
        sp.add_argument("--covariates", help="comma-separated covariate columns")
        sp.add_argument("--treatment-reference",
                        help="zero level for a factor treatment")
        sp.add_argument("--basis", choices=("raw", "poly2", "poly3"), default=None,
                        help="covariate basis expansion (default poly3)")
        sp.add_argument("--standardize", dest="standardize",
                        action="store_true", default=None)
        sp.add_argument("--no-standardize", dest="standardize",
                        action="store_false")
        sp.add_argument("--method", choices=("mw", "eif", "eif-trim", "cbps",
                                             "true-ps"), default=None)
        sp.add_argument("--penalty", choices=("entropy", "quadratic"), default=None)
        sp.add_argument("--eps", type=float, default=None)
        sp.add_argument("--delta", type=float, default=None)
        sp.add_argument("--trim", default=None, help="lo,hi for eif-trim")
        sp.add_argument("--true-pi-column", default=None)
        sp.add_argument("--true-xi-column", default=None)
        sp.add_argument("--tune", action="store_true", default=None,
                        help="select eps/delta by bootstrap stability first")
        sp.add_argument("--tune-grid", type=int, default=None)
        sp.add_argument("--tune-reps", type=int, default=None)

    sp = sub.add_parser("estimate", help="full estimation with inference")
    add_common(sp)
    add_data(sp)
    sp.add_argument("--level", type=float, default=None)
    sp.add_argument("--weights-csv", help="sidecar CSV of fitted weights")
    sp.add_argument("--diagnostics-csv", help="sidecar CSV balance table")

    sp = sub.add_parser("weights", help="fit balancing weights only")
    add_common(sp)
    add_data(sp)
    sp.add_argument("--weights-csv", help="sidecar CSV of fitted weights")

    sp = sub.add_parser("tune", help="bootstrap tolerance selection")
    add_common(sp)
    add_data(sp)

    sp = sub.add_parser("diagnose", help="balance diagnostics table")
    add_common(sp)
    add_data(sp)
    sp.add_argument("--diagnostics-csv", help="sidecar CSV balance table")

    sp = sub.add_parser("simulate", help="Monte Carlo study")
    add_common(sp)
    sp.add_argument("--family", choices=("ts", "wc"), default=None)
    sp.add_argument("--setting", choices=("A", "B", "C"), default=None)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--reps", type=int, default=None)
    sp.add_argument("--methods", default=None,
                    help=f"comma-separated from {ALL_METHODS}")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--delta", type=float, default=None)
    sp.add_argument("--table-csv", help="sidecar CSV in table layout")
    return p


_DEFAULTS = {
    "seed": 0,
    "basis": "poly3",
    "standardize": True,
    "method": "mw",
    "penalty": "entropy",
    "eps": 0.0,
    "delta": 0.0,
    "trim": "0.01,0.99",
    "tune": False,
    "tune_grid": 20,
    "tune_reps": 20,
    "level": 0.95,
    "family": "ts",
    "setting": "A",
    "n": 500,
    "reps": 100,
    "methods": "mw",
    "workers": 1,
}


def _resolve_config(args: argparse.Namespace) -> dict:
    """Layer resolution: hard defaults < config-file section < CLI flags."""
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        ini = configparser.ConfigParser()
        read = ini.read(args.config)
        if not read:
            raise UsageError(f"config file not found: {args.config}")
        if ini.has_section(args.command):
            for key, raw in ini.items(args.command):
                key = key.replace("-", "_")
                if raw.lower() in ("true", "false"):
                    cfg[key] = raw.lower() == "true"
                else:
                    try:
                        cfg[key] = int(raw)
                    except ValueError:
                        try:
                            cfg[key] = float(raw)
                        except ValueError:
                            cfg[key] = raw
    for key, val in vars(args).items():
        if key in ("command", "config"):
            continue
        if val is not None:
            cfg[key] = val
    cfg["command"] = args.command
    return cfg


def _load_dataset(cfg: dict) -> Dataset:
    for key in ("data", "outcome", "treatment", "mediators"):
        if not cfg.get(key):
            raise UsageError(f"--{key.replace('_', '-')} is required")
    roles = ColumnRoles(
        outcome=cfg["outcome"],
        treatment=cfg["treatment"],
        mediators=_parse_list(cfg["mediators"]),
        covariates=_parse_list(cfg.get("covariates")),
        treatment_reference=cfg.get("treatment_reference"),
    )
    return load_csv(cfg["data"], roles)


def _build_designs(data: Dataset, cfg: dict):
    cov = data.covariate_names
    standardize = bool(cfg["standardize"])
    if cfg["basis"] == "raw" or not cov:
        c_spec = raw_spec(cov, standardize=standardize)
    else:
        max_power = 2 if cfg["basis"] == "poly2" else 3
        c_spec = polynomial_spec(data, cov, max_power=max_power,
                                 interaction_order=min(3, max_power),
                                 standardize=standardize)
    med_terms = tuple(BasisTerm(kind="raw", columns=(m,))
                      for m in data.mediator_names)
    b_spec = BasisSpec(terms=c_spec.terms[:-1] + med_terms,
                       include_constant=True, standardize=standardize)
    c_design = build_basis(data, c_spec, scope="covariates")
    b_design = build_basis(data, b_spec, scope="covariates+mediators")
    return c_design, b_design


def _penalty(cfg: dict):
    return entropy() if cfg["penalty"] == "entropy" else quadratic(n_ref=1)


def _fit_weights(data: Dataset, c_design, b_design, cfg: dict, tuning=None):
    method = cfg["method"]
    penalty = _penalty(cfg)
    eps, delta = float(cfg["eps"]), float(cfg["delta"])
    if tuning is not None:
        eps, delta = tuning.eps_star, tuning.delta_star
    if method == "mw":
        std = fit_two_step(data, c_design, b_design, eps, delta, penalty,
                           orientation="standard")
        exch = fit_two_step(data, c_design, b_design, eps, delta, penalty,
                            orientation="exchanged")
        return std, exch
    if method in ("eif", "eif-trim"):
        trim = None
        if method == "eif-trim":
            lo, hi = (float(v) for v in _parse_list(cfg["trim"]))
            trim = (lo, hi)
        pi_fit = fit_logistic(c_design, data.d, model="pi_on_X")
        xi_fit = fit_logistic(b_design, data.d, model="xi_on_MX")
        return (eif_weights(pi_fit, xi_fit, data, trim=trim, orientation="standard"),
                eif_weights(pi_fit, xi_fit, data, trim=trim, orientation="exchanged"))
    if method == "cbps":
        return (cbps_weights(data, c_design, b_design, orientation="standard"),
                cbps_weights(data, c_design, b_design, orientation="exchanged"))
    if method == "true-ps":
        if not cfg.get("true_pi_column") or not cfg.get("true_xi_column"):
            raise UsageError("--true-pi-column and --true-xi-column are "
                             "required for method true-ps")
        frame = pd.read_csv(cfg["data"], float_precision="round_trip")
        for col in (cfg["true_pi_column"], cfg["true_xi_column"]):
            if col not in frame.columns:
                raise UsageError(f"column {col!r} not in {cfg['data']}")
        pi1 = frame[cfg["true_pi_column"]].to_numpy(dtype=float)
        xi1 = frame[cfg["true_xi_column"]].to_numpy(dtype=float)
        return (true_ps_weights(data, pi1, xi1, orientation="standard"),
                true_ps_weights(data, pi1, xi1, orientation="exchanged"))
    raise UsageError(f"unknown method {method!r}")


def _certificates(ws) -> dict:
    if ws.method != "mw":
        return {}
    out = {}
    for label, sol in zip(("step1", "step2"), ws.certificates):
        out[label] = {
            "status": sol.status,
            "iterations": sol.iterations,
            "duality_gap": sol.duality_gap,
            "max_violation": sol.max_violation,
            "dropped_columns": list(sol.dropped_columns),
        }
    return out


def _weight_summary(ws) -> dict:
    return {
        "orientation": ws.orientation,
        "method": ws.method,
        "sum_w1": float(ws.w1.sum()),
        "sum_w2": float(ws.w2.sum()),
        "max_w1": float(ws.w1_group.max()),
        "max_w2": float(ws.w2_group.max()),
        "certificates": _certificates(ws),
    }


def _cmd_estimate(cfg: dict) -> dict:
    data = _load_dataset(cfg)
    c_design, b_design = _build_designs(data, cfg)
    tuning = None
    if cfg.get("tune") and cfg["method"] == "mw":
        tuning = tune_tolerances(data, c_design, b_design, _penalty(cfg),
                                 grid_size=int(cfg["tune_grid"]),
                                 R=int(cfg["tune_reps"]), seed=int(cfg["seed"]))
    wstd, wexch = _fit_weights(data, c_design, b_design, cfg, tuning)
    nuis = fit_nuisances(data, b_design, c_design)
    level = float(cfg["level"])
    reports = {
        family: estimate_with_inference(data, wstd, wexch, nuis, family,
                                        cfg["method"], level=level)
        for family in ("eif", "ipw")
    }
    table = tasmd(data, wstd, c_design, b_design)
    if cfg.get("weights_csv"):
        frame = pd.concat([weights_frame(wstd), weights_frame(wexch)],
                          ignore_index=True)
        frame.to_csv(cfg["weights_csv"], index=False)
    if cfg.get("diagnostics_csv"):
        table.to_frame(method=cfg["method"]).to_csv(cfg["diagnostics_csv"],
                                                    index=False)
    result = {
        "n": data.n,
        "n_treated": data.n_treated,
        "estimates": {fam: rep.to_dict() for fam, rep in reports.items()},
        "balance": {
            "max_tasmd": table.max_value(),
            "tasmd_cp": table.tasmd_cp,
            "tasmd_tc": table.tasmd_tc,
        },
        "weights": {
            "standard": _weight_summary(wstd),
            "exchanged": _weight_summary(wexch),
        },
    }
    if nuis.warnings:
        result["nuisance_warnings"] = nuis.warnings
    if tuning is not None:
        result["tuning"] = tuning.to_dict()
    return result


def _cmd_weights(cfg: dict) -> dict:
    data = _load_dataset(cfg)
    c_design, b_design = _build_designs(data, cfg)
    wstd, wexch = _fit_weights(data, c_design, b_design, cfg)
    if cfg.get("weights_csv"):
        frame = pd.concat([weights_frame(wstd), weights_frame(wexch)],
                          ignore_index=True)
        frame.to_csv(cfg["weights_csv"], index=False)
    return {
        "n": data.n,
        "weights": {
            "standard": _weight_summary(wstd),
            "exchanged": _weight_summary(wexch),
        },
    }


def _cmd_tune(cfg: dict) -> dict:
    data = _load_dataset(cfg)
    c_design, b_design = _build_designs(data, cfg)
    tuning = tune_tolerances(data, c_design, b_design, _penalty(cfg),
                             grid_size=int(cfg["tune_grid"]),
                             R=int(cfg["tune_reps"]), seed=int(cfg["seed"]))
    return {"tuning": tuning.to_dict()}


def _cmd_diagnose(cfg: dict) -> dict:
    data = _load_dataset(cfg)
    c_design, b_design = _build_designs(data, cfg)
    wstd, _ = _fit_weights(data, c_design, b_design, cfg)
    table = tasmd(data, wstd, c_design, b_design)
    if cfg.get("diagnostics_csv"):
        table.to_frame(method=cfg["method"]).to_csv(cfg["diagnostics_csv"],
                                                    index=False)
    return {
        "balance": {
            "max_tasmd": table.max_value(),
            "tasmd_cp": table.tasmd_cp,
            "tasmd_tc": table.tasmd_tc,
        },
        "weights": {"standard": _weight_summary(wstd)},
    }


def _cmd_simulate(cfg: dict) -> dict:
    family = {"ts": "ts2012", "wc": "wc2018"}[cfg["family"]]
    methods = _parse_list(cfg["methods"])
    res = run_mc(family, cfg["setting"], int(cfg["n"]), methods,
                 reps=int(cfg["reps"]), seed=int(cfg["seed"]),
                 workers=int(cfg["workers"]), eps=float(cfg["eps"]),
                 delta=float(cfg["delta"]))
    if cfg.get("table_csv"):
        rows = []
        for key, cell in sorted(res.cells.items()):
            method, fam = key.split("/")
            for estimand in ("nde_0", "nde_1"):
                stats = cell[estimand]
                rows.append({
                    "method": method, "estimator": fam, "estimand": estimand,
                    "abs_bias": stats.get("abs_bias"), "var": stats["var"],
                    "mse": stats.get("mse"),
                })
        pd.DataFrame(rows).to_csv(cfg["table_csv"], index=False)
    return {"simulation": res.to_dict()}


_COMMANDS = {
    "estimate": _cmd_estimate,
    "weights": _cmd_weights,
    "tune": _cmd_tune,
    "diagnose": _cmd_diagnose,
    "simulate": _cmd_simulate,
}


def _emit(report: dict, out_path: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        sys.stderr.write(parser.format_usage())
        return 1

    report = {
        "schema_version": SCHEMA_VERSION,
        "command": cfg["command"],
        "config": {k: v for k, v in sorted(cfg.items())},
        "versions": _versions(),
    }
    try:
        report["results"] = _COMMANDS[cfg["command"]](cfg)
    except (UsageError, DataError, FileNotFoundError) as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        report["error"] = {"type": type(exc).__name__, "message": str(exc),
                           "kind": "usage"}
        _emit(report, cfg.get("out"))
        return 1
    except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        report["error"] = {"type": type(exc).__name__, "message": str(exc),
                           "kind": "numerical"}
        _emit(report, cfg.get("out"))
        return 2
    _emit(report, cfg.get("out"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
