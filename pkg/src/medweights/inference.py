"""Variance estimation, confidence intervals, and p-values.

The variance of each cross-world or potential-outcome mean is the sample
second moment of its plug-in influence contributions, in which the inverse
propensity factors are replaced by ``n`` times the fitted (normalized)
weights.  Effect-level variances difference the per-row contributions of
the two constituent means before taking the sample variance, which accounts
for their covariance on the shared sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .data import Dataset
from .estimators import (
    _EFFECTS,
    ESTIMANDS,
    EstimandResult,
    EstimateReport,
    NuisanceFit,
    estimate_eif_type,
    estimate_ipw_type,
)
from .twostep import WeightSet

__all__ = [
    "InfluenceVector",
    "influence_theta",
    "variance_theta",
    "variance_effect",
    "normal_ci",
    "normal_p_value",
    "estimate_with_inference",
]

_NORMAL = NormalDist()


@dataclass
class InfluenceVector:
    """Mean-centered per-row influence contributions for one estimand."""

    values: np.ndarray
    estimand: str
    family: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


def _raw_contributions(data: Dataset, wstd: WeightSet, wexch: WeightSet,
                       nuis: NuisanceFit, estimand: str, theta_hat: float):
    y, n = data.y, data.n
    if estimand == "theta_10":
        core = (n * wstd.w2 * (y - nuis.mu1)
                + n * wstd.w1 * (nuis.mu1 - nuis.eta10) + nuis.eta10)
    elif estimand == "theta_01":
        core = (n * wexch.w2 * (y - nuis.mu0)
                + n * wexch.w1 * (nuis.mu0 - nuis.eta01) + nuis.eta01)
    elif estimand == "theta_0":
        core = n * wstd.w1 * (y - nuis.m0) + nuis.m0
    elif estimand == "theta_1":
        core = n * wexch.w1 * (y - nuis.m1) + nuis.m1
    else:
        raise ValueError(f"not a mean-type estimand: {estimand!r}")
    return core - theta_hat


def variance_theta(data: Dataset, wstd: WeightSet, wexch: WeightSet,
                   nuis: NuisanceFit, estimand: str, theta_hat: float) -> float:
    """Per-observation variance of a mean-type estimand.

    Returns ``V = (1/n) sum_i phi_i^2`` with contributions centered at the
    point estimate; the standard error of the estimate is ``sqrt(V / n)``.
    """
    phi = _raw_contributions(data, wstd, wexch, nuis, estimand, theta_hat)
    return float(np.mean(phi**2))


def influence_theta(data: Dataset, wstd: WeightSet, wexch: WeightSet,
                    nuis: NuisanceFit, estimand: str, theta_hat: float,
                    family: str = "eif") -> InfluenceVector:
    phi = _raw_contributions(data, wstd, wexch, nuis, estimand, theta_hat)
    return InfluenceVector(values=phi - phi.mean(), estimand=estimand,
                           family=family)


def variance_effect(iv_a: InfluenceVector, iv_b: InfluenceVector) -> float:
    """Variance of an effect estimate (difference of two means).

    Sample variance of the differenced per-row contributions, divided by n.
    """
    if iv_a.values.shape != iv_b.values.shape:
        raise ValueError("influence vectors are on different samples")
    diff = iv_a.values - iv_b.values
    n = diff.shape[0]
    return float(np.mean((diff - diff.mean()) ** 2) / n)


def normal_ci(point: float, se: float, level: float = 0.95):
    z = _NORMAL.inv_cdf(0.5 + level / 2.0)
    return point - z * se, point + z * se


def normal_p_value(point: float, se: float) -> float:
    if se == 0.0:
        return 0.0 if point != 0.0 else 1.0
    z = abs(point) / se
    return 2.0 * (1.0 - _NORMAL.cdf(z))


def estimate_with_inference(data: Dataset, wstd: WeightSet, wexch: WeightSet,
                            nuis: NuisanceFit, family: str, method: str,
                            level: float = 0.95) -> EstimateReport:
    """Assemble a full report: points, variances, intervals, p-values."""
    if family == "eif":
        points = estimate_eif_type(data, wstd, wexch, nuis)
    elif family == "ipw":
        points = estimate_ipw_type(data, wstd, wexch)
    else:
        raise ValueError(f"unknown estimator family {family!r}")
    n = data.n

    influences = {
        name: influence_theta(data, wstd, wexch, nuis, name, points[name], family)
        for name in ("theta_10", "theta_01", "theta_1", "theta_0")
    }
    results: dict[str, EstimandResult] = {}
    for name in ESTIMANDS:
        point = points[name]
        if name in influences:
            v = variance_theta(data, wstd, wexch, nuis, name, point)
            var_est = v / n
        else:
            a, b = _EFFECTS[name]
            var_est = variance_effect(influences[a], influences[b])
        se = float(np.sqrt(var_est))
        lo, hi = normal_ci(point, se, level)
        results[name] = EstimandResult(
            estimate=point, variance=var_est, se=se, ci_low=lo, ci_high=hi,
            p_value=normal_p_value(point, se),
        )
    return EstimateReport(method=method, family=family, estimands=results)
