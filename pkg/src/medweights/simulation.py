"""Monte Carlo studies: data-generating processes and replication engine.

Two families are provided.  ``ts2012`` has an additive outcome in which both
natural direct effects equal 1; ``wc2018`` generates the treatment effect
purely through treatment-by-covariate interactions, so both direct effects
are 0.  Latent standard-normal draws ``z1..z10`` are exposed alongside their
nonlinear transforms ``x1..``, and every replication draws from
counter-based substreams keyed by (seed, replication, variable block), so
results do not depend on worker scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import (
    cbps_weights,
    eif_weights,
    fit_logistic,
    true_ps_weights,
    xi_from_mediator_model,
)
from .data import BasisSpec, BasisTerm, Dataset, build_basis, raw_spec
from .estimators import (
    ESTIMANDS,
    estimate_eif_type,
    estimate_ipw_type,
    estimate_regression_imputation,
    fit_nuisances,
)
from .inference import estimate_with_inference
from .penalties import Penalty, entropy
from .twostep import ConvergenceError, fit_two_step

__all__ = [
    "TRUTHS",
    "WEIGHT_METHODS",
    "draw",
    "SettingConfig",
    "setting_config",
    "MCResult",
    "run_mc",
]

TRUTHS = {
    "ts2012": {"nde_0": 1.0, "nde_1": 1.0},
    "wc2018": {"nde_0": 0.0, "nde_1": 0.0},
}

WEIGHT_METHODS = ("mw", "eif", "eif-trim", "cbps", "true-ps")
ALL_METHODS = WEIGHT_METHODS + ("ri",)


def _expit(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _block_rng(seed: int, rep: int, block: int):
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence((seed, rep, block))))


def draw(family: str, n: int, seed: int, rep: int):
    """Draw one synthetic sample.

    Returns ``(dataset, pi1, xi1)`` where ``pi1`` is the true treatment
    probability given the latent covariates and ``xi1`` the true treatment
    probability given the observed mediator as well, obtained from the
    mediator model by Bayes' rule.
    """
    z = _block_rng(seed, rep, 0).standard_normal((n, 10))
    z1, z2, z3, z4 = z[:, 0], z[:, 1], z[:, 2], z[:, 3]

    if family == "ts2012":
        x_extra = np.column_stack([
            np.exp(z1 / 2.0),
            z2 / (1.0 + np.exp(z1)) + 10.0,
            (z1 * z3 / 25.0 + 0.6) ** 3,
            (z2 * z4 + 20.0) ** 2,
        ])
        x_names = ("x1", "x2", "x3", "x4")
        d_lin = z1 - 0.5 * z2 + 0.25 * z3 + 0.1 * z4
    elif family == "wc2018":
        x_extra = np.column_stack([
            np.exp(z1 / 2.0),
            z2 / (1.0 + np.exp(z1)),
            (z1 * z3 / 25.0 + 0.6) ** 3,
            (z2 + z4 + 20.0) ** 2,
            *[z[:, j] for j in range(4, 10)],
        ])
        x_names = tuple(f"x{j}" for j in range(1, 11))
        d_lin = -z1 - 0.1 * z4
    else:
        raise ValueError(f"unknown family {family!r}")

    pi1 = _expit(d_lin)
    d = (_block_rng(seed, rep, 1).random(n) < pi1).astype(int)

    m_base = 0.5 - z1 + 0.5 * z2 - 0.9 * z3 + z4
    pm = _expit(m_base - 1.5 * d)
    m = (_block_rng(seed, rep, 2).random(n) < pm).astype(float)

    eps = _block_rng(seed, rep, 3).standard_normal(n)
    signal = 27.4 * z1 + 13.7 * z2 + 13.7 * z3 + 13.7 * z4
    if family == "ts2012":
        y = 210.0 + signal + m + d + eps
    else:
        y = 210.0 + (1.5 * d + m - 0.5) * signal + eps

    # P(D=1 | m, z) by Bayes' rule on the binary mediator
    pm1 = _expit(m_base - 1.5)
    pm0 = _expit(m_base)
    f1 = np.where(m == 1.0, pm1, 1.0 - pm1)
    f0 = np.where(m == 1.0, pm0, 1.0 - pm0)
    xi1 = pi1 * f1 / (pi1 * f1 + (1.0 - pi1) * f0)

    data = Dataset(
        y=y,
        d=d,
        m=m,
        x=np.column_stack([z, x_extra]),
        mediator_names=("m",),
        covariate_names=tuple(f"z{j}" for j in range(1, 11)) + x_names,
    )
    return data, pi1, xi1


# ---------------------------------------------------------------------------
# setting configurations
# ---------------------------------------------------------------------------


def _with_mediator(cols, interactions=()):
    terms = [BasisTerm(kind="raw", columns=(c,)) for c in cols]
    terms.append(BasisTerm(kind="raw", columns=("m",)))
    terms.extend(BasisTerm(kind="interaction", columns=("m", zc))
                 for zc in interactions)
    return BasisSpec(terms=tuple(terms), include_constant=True)


@dataclass(frozen=True)
class SettingConfig:
    """Regressor sets per role for one simulation setting.

    ``balance1``/``balance2`` drive the balancing constraints (and the GMM
    balance moments); ``pi``/``xi`` the propensity models; ``mu``/``eta``
    the outcome regressions shared by all weighting estimators; ``ri_mu``/
    ``ri_eta`` the regression-imputation comparator.
    """

    family: str
    setting: str
    balance1: BasisSpec
    balance2: BasisSpec
    pi: BasisSpec
    xi: BasisSpec
    mu: BasisSpec
    eta: BasisSpec
    ri_mu: BasisSpec
    ri_eta: BasisSpec


def setting_config(family: str, setting: str) -> SettingConfig:
    z4 = tuple(f"z{j}" for j in range(1, 5))
    if family == "ts2012":
        x4 = ("x1", "x2", "x3", "x4")
        if setting == "A":
            c, b = raw_spec(z4), _with_mediator(z4)
            return SettingConfig(family, setting, c, b, c, b, b, c, b, c)
        if setting == "B":
            wset = x4 + z4
            c, b = raw_spec(wset), _with_mediator(wset)
            mu, eta = _with_mediator(x4), raw_spec(x4)
            ri_mu, ri_eta = _with_mediator(wset), raw_spec(wset)
            return SettingConfig(family, setting, c, b, c, b, mu, eta,
                                 ri_mu, ri_eta)
        if setting == "C":
            c, b = raw_spec(z4), _with_mediator(z4)
            mu, eta = _with_mediator(x4), raw_spec(x4)
            return SettingConfig(family, setting, c, b, c, b, mu, eta, mu, eta)
    elif family == "wc2018":
        x10 = tuple(f"x{j}" for j in range(1, 11))
        if setting == "A":
            c, b = raw_spec(z4), _with_mediator(z4)
            return SettingConfig(family, setting, c, b, c, b, b, c, b, c)
        if setting == "B":
            wset = x10 + z4
            c = raw_spec(wset)
            b = _with_mediator(wset, interactions=z4)
            mu, eta = _with_mediator(x10), raw_spec(x10)
            ri_mu = _with_mediator(x10 + z4, interactions=z4)
            ri_eta = raw_spec(x10 + z4)
            return SettingConfig(family, setting, c, b, c, b, mu, eta,
                                 ri_mu, ri_eta)
    raise ValueError(f"no setting {setting!r} for family {family!r}")


# ---------------------------------------------------------------------------
# replication engine
# ---------------------------------------------------------------------------


def _fit_weight_pair(method, data, designs, pi1_true, xi1_true, penalty,
                     eps, delta, trim):
    if method == "mw":
        std = fit_two_step(data, designs["balance1"], designs["balance2"],
                           eps, delta, penalty, orientation="standard")
        exch = fit_two_step(data, designs["balance1"], designs["balance2"],
                            eps, delta, penalty, orientation="exchanged")
        return std, exch
    if method in ("eif", "eif-trim"):
        pi_fit = fit_logistic(designs["pi"], data.d, model="pi_on_X")
        # binary mediator: derive the mediator-conditional propensity from a
        # correctly-specifiable mediator model rather than a direct logit
        xi_fit = xi_from_mediator_model(pi_fit, data, designs["pi"])
        t = trim if method == "eif-trim" else None
        return (eif_weights(pi_fit, xi_fit, data, trim=t, orientation="standard"),
                eif_weights(pi_fit, xi_fit, data, trim=t, orientation="exchanged"))
    if method == "cbps":
        return (cbps_weights(data, designs["balance1"], designs["balance2"],
                             orientation="standard"),
                cbps_weights(data, designs["balance1"], designs["balance2"],
                             orientation="exchanged"))
    if method == "true-ps":
        return (true_ps_weights(data, pi1_true, xi1_true, orientation="standard"),
                true_ps_weights(data, pi1_true, xi1_true, orientation="exchanged"))
    raise ValueError(f"unknown weighting method {method!r}")


def replicate_once(family: str, setting: str, n: int, methods, seed: int,
                   rep: int, eps=0.0, delta=0.0, trim=(0.01, 0.99),
                   penalty: Penalty | None = None,
                   collect_inference: bool = False):
    """Run the full pipeline on one synthetic draw.

    Returns ``(estimates, errors, intervals)``: estimates maps
    ``"method/family"`` to the estimand dict, errors maps method to a
    failure message, intervals (when requested) maps ``"method/family"`` to
    per-estimand (lo, hi) bounds.
    """
    penalty = penalty or entropy()
    cfg = setting_config(family, setting)
    data, pi1_true, xi1_true = draw(family, n, seed, rep)
    designs = {
        "balance1": build_basis(data, cfg.balance1, scope="covariates"),
        "balance2": build_basis(data, cfg.balance2, scope="covariates+mediators"),
        "pi": build_basis(data, cfg.pi, scope="covariates"),
        "xi": build_basis(data, cfg.xi, scope="covariates+mediators"),
    }
    b_out = build_basis(data, cfg.mu, scope="covariates+mediators")
    c_out = build_basis(data, cfg.eta, scope="covariates")
    nuis = fit_nuisances(data, b_out, c_out)

    estimates: dict = {}
    intervals: dict = {}
    errors: dict = {}
    for method in methods:
        if method == "ri":
            if cfg.ri_mu == cfg.mu and cfg.ri_eta == cfg.eta:
                nuis_ri = nuis
            else:
                nuis_ri = fit_nuisances(
                    data,
                    build_basis(data, cfg.ri_mu, scope="covariates+mediators"),
                    build_basis(data, cfg.ri_eta, scope="covariates"),
                )
            estimates["ri/ri"] = estimate_regression_imputation(data, nuis_ri)
            continue
        try:
            wstd, wexch = _fit_weight_pair(method, data, designs, pi1_true,
                                           xi1_true, penalty, eps, delta, trim)
        except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
            errors[method] = str(exc)
            continue
        for family_name in ("eif", "ipw"):
            key = f"{method}/{family_name}"
            if collect_inference:
                report = estimate_with_inference(data, wstd, wexch, nuis,
                                                 family_name, method)
                estimates[key] = {k: v.estimate for k, v in report.estimands.items()}
                intervals[key] = {k: (v.ci_low, v.ci_high)
                                  for k, v in report.estimands.items()}
            elif family_name == "eif":
                estimates[key] = estimate_eif_type(data, wstd, wexch, nuis)
            else:
                estimates[key] = estimate_ipw_type(data, wstd, wexch)
    return estimates, errors, intervals


@dataclass
class MCResult:
    family: str
    setting: str
    n: int
    reps: int
    seed: int
    methods: tuple
    cells: dict                  # "method/family" -> estimand -> stats dict
    failures: dict               # method -> count
    failure_messages: list
    coverage: dict = field(default_factory=dict)
    wall_time: float = 0.0       # informational; kept out of serialized form

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "setting": self.setting,
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "methods": list(self.methods),
            "cells": self.cells,
            "failures": self.failures,
            "failure_messages": self.failure_messages,
            "coverage": self.coverage,
        }

    def stat(self, method_family: str, estimand: str, name: str) -> float:
        return self.cells[method_family][estimand][name]


def _worker(args):
    (family, setting, n, methods, seed, rep, eps, delta, trim,
     collect_inference) = args
    return rep, replicate_once(family, setting, n, methods, seed, rep,
                               eps=eps, delta=delta, trim=trim,
                               collect_inference=collect_inference)


def run_mc(family: str, setting: str, n: int, methods, reps: int, seed: int,
           workers: int = 1, eps=0.0, delta=0.0, trim=(0.01, 0.99),
           collect_inference: bool = False) -> MCResult:
    """Replicate the estimation pipeline and aggregate bias/variance/MSE.

    Failed replications are excluded per method and counted, never silently
    dropped.  With a fixed seed the result is identical for any worker
    count.
    """
    import time

    methods = tuple(methods)
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {ALL_METHODS}")
    t0 = time.perf_counter()
    args = [(family, setting, n, methods, seed, rep, eps, delta, trim,
             collect_inference) for rep in range(reps)]
    results: list = [None] * reps
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rep, payload in pool.map(_worker, args,
                                         chunksize=max(1, reps // (8 * workers))):
                results[rep] = payload
    else:
        for a in args:
            rep, payload = _worker(a)
            results[rep] = payload

    truth = TRUTHS[family]
    per_cell: dict = {}
    cover_counts: dict = {}
    failures: dict = {m: 0 for m in methods if m != "ri"}
    failure_messages: list = []
    for rep, (estimates, errors, intervals) in enumerate(results):
        for method, msg in errors.items():
            failures[method] += 1
            if len(failure_messages) < 20:
                failure_messages.append(f"rep {rep} {method}: {msg}")
        for key, points in estimates.items():
            store = per_cell.setdefault(key, {e: [] for e in ESTIMANDS})
            for e in ESTIMANDS:
                store[e].append(points[e])
        for key, ci in intervals.items():
            store = cover_counts.setdefault(key, {e: [] for e in truth})
            for e in truth:
                lo, hi = ci[e]
                store[e].append(lo <= truth[e] <= hi)

    cells: dict = {}
    for key, store in per_cell.items():
        cells[key] = {}
        for e, vals in store.items():
            arr = np.asarray(vals, dtype=float)
            mean = math.fsum(vals) / len(vals)
            var = float(np.mean((arr - mean) ** 2))
            entry = {"mean": mean, "var": var, "reps_used": len(vals)}
            if e in truth:
                bias = mean - truth[e]
                entry["abs_bias"] = abs(bias)
                entry["mse"] = bias**2 + var
            cells[key][e] = entry

    coverage = {
        key: {e: float(np.mean(flags)) for e, flags in store.items()}
        for key, store in cover_counts.items()
    }
    failures = {m: c for m, c in failures.items() if c}
    return MCResult(
        family=family,
        setting=setting,
        n=n,
        reps=reps,
        seed=seed,
        methods=methods,
        cells=cells,
        failures=failures,
        failure_messages=failure_messages,
        coverage=coverage,
        wall_time=time.perf_counter() - t0,
    )
