"""Nuisance regressions and point estimators for mediation estimands.

Estimands are the two cross-world means, the two potential-outcome means,
and the derived direct/indirect/total effects:

    theta_10 = E[Y under treatment with the control mediator distribution]
    theta_01 = the mirror image
    theta_1, theta_0 = mean potential outcome under each arm
    nde_0 = theta_10 - theta_0      nie_0 = theta_01 - theta_0
    nde_1 = theta_1 - theta_01      nie_1 = theta_1 - theta_10
    ate   = theta_1 - theta_0

Three estimator families share these: the augmented (regression-corrected)
weighting form, the pure weighting form, and regression imputation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .data import Dataset, DesignMatrix
from .twostep import WeightSet

__all__ = [
    "ESTIMANDS",
    "NuisanceFit",
    "EstimandResult",
    "EstimateReport",
    "fit_nuisances",
    "estimate_eif_type",
    "estimate_ipw_type",
    "estimate_regression_imputation",
]

ESTIMANDS = (
    "theta_10", "theta_01", "theta_1", "theta_0",
    "nde_0", "nde_1", "nie_0", "nie_1", "ate",
)

_EFFECTS = {
    "nde_0": ("theta_10", "theta_0"),
    "nde_1": ("theta_1", "theta_01"),
    "nie_0": ("theta_01", "theta_0"),
    "nie_1": ("theta_1", "theta_10"),
    "ate": ("theta_1", "theta_0"),
}


@dataclass
class NuisanceFit:
    """Per-row fitted values of the six outcome regressions.

    mu1/mu0 regress Y on the mediator basis within each arm; eta10 regresses
    mu1 on the covariate basis over controls (eta01 mirrors over treated);
    m1/m0 regress Y on the covariate basis within each arm.  Every fit is
    evaluated on all rows.
    """

    mu1: np.ndarray
    mu0: np.ndarray
    eta10: np.ndarray
    eta01: np.ndarray
    m1: np.ndarray
    m0: np.ndarray
    coefs: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def _group_ols(X: np.ndarray, y: np.ndarray, mask: np.ndarray, label: str,
               warnings: list, names) -> np.ndarray:
    Xg, yg = X[mask], y[mask]
    gram = Xg.T @ Xg
    rhs = Xg.T @ yg
    try:
        coef = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        coef = None
    if coef is None or not np.all(np.isfinite(coef)):
        rank = np.linalg.matrix_rank(gram)
        _, _, piv = scipy.linalg.qr(Xg, mode="economic", pivoting=True)
        dropped = [names[j] for j in piv[rank:]] if names else list(piv[rank:])
        warnings.append(f"{label}: rank-deficient design (rank {rank}), "
                        f"ridge fallback; dependent columns {dropped}")
        coef = np.linalg.solve(gram + 1e-10 * np.eye(gram.shape[0]), rhs)
    return coef


def fit_nuisances(data: Dataset, b_design: DesignMatrix, c_design: DesignMatrix,
                  ) -> NuisanceFit:
    """Fit all six nuisance regressions by per-group least squares."""
    B, C = b_design.values, c_design.values
    treated = data.d == 1
    warnings: list = []
    coefs: dict = {}

    def fit(X, y, mask, label, names):
        coef = _group_ols(X, y, mask, label, warnings, names)
        coefs[label] = coef
        return X @ coef

    mu1 = fit(B, data.y, treated, "mu1", b_design.column_names)
    mu0 = fit(B, data.y, ~treated, "mu0", b_design.column_names)
    eta10 = fit(C, mu1, ~treated, "eta10", c_design.column_names)
    eta01 = fit(C, mu0, treated, "eta01", c_design.column_names)
    m1 = fit(C, data.y, treated, "m1", c_design.column_names)
    m0 = fit(C, data.y, ~treated, "m0", c_design.column_names)
    return NuisanceFit(mu1=mu1, mu0=mu0, eta10=eta10, eta01=eta01, m1=m1, m0=m0,
                       coefs=coefs, warnings=warnings)


def _derive_effects(theta: dict) -> dict:
    out = dict(theta)
    for effect, (a, b) in _EFFECTS.items():
        out[effect] = theta[a] - theta[b]
    return out


def estimate_eif_type(data: Dataset, weights_std: WeightSet,
                      weights_exch: WeightSet, nuis: NuisanceFit) -> dict:
    """Augmented weighting estimator: weighted residuals plus regression
    anchors.  Expects normalized weights (each group summing to one)."""
    y, n = data.y, data.n
    w1, w2 = weights_std.w1, weights_std.w2
    w1x, w2x = weights_exch.w1, weights_exch.w2
    theta = {
        "theta_10": float(w2 @ (y - nuis.mu1) + w1 @ (nuis.mu1 - nuis.eta10)
                          + nuis.eta10.mean()),
        "theta_01": float(w2x @ (y - nuis.mu0) + w1x @ (nuis.mu0 - nuis.eta01)
                          + nuis.eta01.mean()),
        "theta_0": float(w1 @ (y - nuis.m0) + nuis.m0.mean()),
        "theta_1": float(w1x @ (y - nuis.m1) + nuis.m1.mean()),
    }
    return _derive_effects(theta)


def estimate_ipw_type(data: Dataset, weights_std: WeightSet,
                      weights_exch: WeightSet) -> dict:
    """Pure weighting estimator: weighted outcome means only."""
    y = data.y
    theta = {
        "theta_10": float(weights_std.w2 @ y),
        "theta_01": float(weights_exch.w2 @ y),
        "theta_0": float(weights_std.w1 @ y),
        "theta_1": float(weights_exch.w1 @ y),
    }
    return _derive_effects(theta)


def estimate_regression_imputation(data: Dataset, nuis: NuisanceFit) -> dict:
    """Plug-in estimator averaging the fitted counterfactual regressions."""
    theta = {
        "theta_10": float(nuis.eta10.mean()),
        "theta_01": float(nuis.eta01.mean()),
        "theta_0": float(nuis.m0.mean()),
        "theta_1": float(nuis.m1.mean()),
    }
    return _derive_effects(theta)


@dataclass
class EstimandResult:
    estimate: float
    variance: float | None = None     # variance of the estimate
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    p_value: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class EstimateReport:
    method: str                        # weighting scheme
    family: str                        # "eif" | "ipw" | "ri"
    estimands: dict                    # name -> EstimandResult
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "family": self.family,
            "estimands": {k: v.to_dict() for k, v in self.estimands.items()},
            "diagnostics": self.diagnostics,
        }
