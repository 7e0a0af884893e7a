"""Comparator weighting schemes built on parametric propensity models.

Covers inverse-propensity weights from logistic fits (optionally trimmed),
the two-step GMM variant that augments the logistic score with balance
moments, and plug-in weights from known propensities for simulation use.
All weight sets are normalized to sum to one within each group and are
returned in the same full-length layout as the balancing weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .data import Dataset, DesignMatrix
from .twostep import WeightSet

__all__ = [
    "PropensityFit",
    "fit_logistic",
    "eif_weights",
    "xi_from_mediator_model",
    "CBPSFit",
    "fit_cbps",
    "cbps_weights",
    "true_ps_weights",
]


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class PropensityFit:
    """Fitted logistic propensity model, evaluated on every row."""

    coef: np.ndarray
    fitted: np.ndarray          # P(D=1 | design row)
    model: str                  # "pi_on_X" | "xi_on_MX"
    converged: bool
    separation: bool = False
    ridge: float = 0.0

    def prob(self, d: int) -> np.ndarray:
        return self.fitted if d == 1 else 1.0 - self.fitted


def fit_logistic(design: DesignMatrix | np.ndarray, d, model: str = "pi_on_X",
                 max_iter: int = 100, tol: float = 1e-10) -> PropensityFit:
    """Maximum-likelihood logit via iteratively reweighted least squares.

    Quasi-separation (fitted probabilities within 1e-12 of 0 or 1) or a
    singular weighted Gram triggers a flagged refit with ridge 1e-8.
    """
    X = design.values if isinstance(design, DesignMatrix) else np.asarray(design, float)
    d = np.asarray(d, dtype=float)
    if d.min() == d.max():
        raise ValueError("both treatment classes must be present")

    def irls(ridge):
        beta = np.zeros(X.shape[1])
        ll_prev = -np.inf
        for _ in range(max_iter):
            p = _sigmoid(X @ beta)
            score = X.T @ (d - p) - ridge * beta
            if np.max(np.abs(score)) < tol:
                return beta, p, True
            w = np.clip(p * (1.0 - p), 1e-12, None)
            hess = X.T @ (X * w[:, None]) + ridge * np.eye(X.shape[1])
            try:
                step = np.linalg.solve(hess, score)
            except np.linalg.LinAlgError:
                return beta, p, False
            size = 1.0
            for _ls in range(40):
                cand = beta + size * step
                pc = np.clip(_sigmoid(X @ cand), 1e-300, 1 - 1e-16)
                ll = float(d @ np.log(pc) + (1 - d) @ np.log1p(-pc)) \
                    - 0.5 * ridge * cand @ cand
                if ll >= ll_prev - 1e-12:
                    break
                size *= 0.5
            beta = beta + size * step
            ll_prev = ll
        p = _sigmoid(X @ beta)
        converged = np.max(np.abs(X.T @ (d - p) - ridge * beta)) < 1e-8
        return beta, p, converged

    beta, p, converged = irls(0.0)
    separation = bool(np.any(p <= 1e-12) or np.any(p >= 1 - 1e-12)) or not converged
    ridge = 0.0
    if separation:
        ridge = 1e-8
        beta, p, converged = irls(ridge)
    return PropensityFit(coef=beta, fitted=p, model=model, converged=converged,
                         separation=separation, ridge=ridge)


def _normalize(w, mask):
    out = np.zeros_like(w)
    total = w[mask].sum()
    if total <= 0 or not np.isfinite(total):
        raise FloatingPointError("weights do not normalize: group total "
                                 f"{total!r}")
    out[mask] = w[mask] / total
    return out


def _assemble_ratio_weights(data: Dataset, pi1, xi1, orientation, trim, method):
    """Shared assembly for every inverse-propensity scheme.

    Standard orientation: step-1 weights 1/P(D=0|X) on controls, step-2
    weights P(D=0|M,X) / (P(D=0|X) P(D=1|M,X)) on treated.  Exchanged swaps
    the arms and the probability roles.
    """
    treated = data.d == 1
    if orientation == "standard":
        mask1, mask2 = ~treated, treated
        p_base, xi_num, xi_den = 1.0 - pi1, 1.0 - xi1, xi1
    elif orientation == "exchanged":
        mask1, mask2 = treated, ~treated
        p_base, xi_num, xi_den = pi1, xi1, 1.0 - xi1
    else:
        raise ValueError(f"unknown orientation {orientation!r}")

    if trim is not None:
        lo, hi = trim
        p_base = np.clip(p_base, lo, hi)
        xi_num = np.clip(xi_num, lo, hi)
        xi_den = np.clip(xi_den, lo, hi)
    with np.errstate(divide="raise", over="raise"):
        w1_raw = 1.0 / p_base
        prod = p_base * xi_den / xi_num
        if trim is not None:
            prod = np.clip(prod, trim[0], trim[1])
        w2_raw = 1.0 / prod
    w1 = np.zeros(data.n)
    w2 = np.zeros(data.n)
    w1[mask1] = w1_raw[mask1]
    w2[mask2] = w2_raw[mask2]
    return WeightSet(
        w1=_normalize(w1, mask1),
        w2=_normalize(w2, mask2),
        w1_mask=mask1,
        w2_mask=mask2,
        orientation=orientation,
        method=method,
    )


def eif_weights(pi_fit: PropensityFit, xi_fit: PropensityFit, data: Dataset,
                trim: tuple[float, float] | None = None,
                orientation: str = "standard") -> WeightSet:
    """Inverse-propensity weights from fitted logit models.

    ``trim`` clamps each propensity factor and the assembled product's
    implied probability into the given interval before inverting, which
    bounds the raw weights by ``1/trim[0]``.
    """
    method = "eif-trim" if trim is not None else "eif"
    return _assemble_ratio_weights(data, pi_fit.fitted, xi_fit.fitted,
                                   orientation, trim, method)


def xi_from_mediator_model(pi_fit: PropensityFit, data: Dataset,
                           cov_design: DesignMatrix | np.ndarray) -> PropensityFit:
    """Mediator-conditional propensity for a single binary mediator.

    Fits a logit of the mediator on (covariate basis, treatment) and turns
    it, together with the treatment propensity, into P(D=1 | M, X) by Bayes'
    rule.  Unlike a direct logit of D on (M, X), this stays consistent
    whenever the mediator model itself is correctly specified.
    """
    if data.m.shape[1] != 1 or set(np.unique(data.m[:, 0])) - {0.0, 1.0}:
        raise ValueError("mediator-model route requires one binary mediator")
    C = cov_design.values if isinstance(cov_design, DesignMatrix) else np.asarray(cov_design, float)
    m = data.m[:, 0]
    X_med = np.column_stack([C, data.d.astype(float)])
    med_fit = fit_logistic(X_med, m, model="m_on_XD")
    base = C @ med_fit.coef[:-1]
    d_coef = med_fit.coef[-1]
    pm1 = _sigmoid(base + d_coef)       # P(M=1 | D=1, X)
    pm0 = _sigmoid(base)                # P(M=1 | D=0, X)
    f1 = np.where(m == 1.0, pm1, 1.0 - pm1)
    f0 = np.where(m == 1.0, pm0, 1.0 - pm0)
    pi1 = pi_fit.fitted
    xi1 = pi1 * f1 / (pi1 * f1 + (1.0 - pi1) * f0)
    return PropensityFit(coef=med_fit.coef, fitted=xi1, model="xi_on_MX",
                         converged=med_fit.converged,
                         separation=med_fit.separation, ridge=med_fit.ridge)


def true_ps_weights(data: Dataset, pi1_true, xi1_true,
                    orientation: str = "standard") -> WeightSet:
    """Plug-in weights from known propensities (simulation oracle)."""
    pi1 = np.asarray(pi1_true, dtype=float)
    xi1 = np.asarray(xi1_true, dtype=float)
    return _assemble_ratio_weights(data, pi1, xi1, orientation, None, "true-ps")


# ---------------------------------------------------------------------------
# two-step GMM propensities with balance moments
# ---------------------------------------------------------------------------


@dataclass
class CBPSFit:
    pi_fit: PropensityFit
    xi_fit: PropensityFit
    objective_step1: float
    objective_step2: float
    converged: bool


def _gmm_solve(moments, jac, beta0, just_identified, max_iter=500):
    if just_identified:
        res = optimize.root(moments, beta0, jac=jac, method="hybr",
                            options={"maxfev": max_iter * len(beta0)})
        beta = res.x
        g = moments(beta)
        return beta, float(g @ g), bool(res.success)

    def q(beta):
        g = moments(beta)
        return 0.5 * float(g @ g)

    def dq(beta):
        return jac(beta).T @ moments(beta)

    res = optimize.minimize(q, beta0, jac=dq, method="BFGS",
                            options={"maxiter": max_iter, "gtol": 1e-12})
    return res.x, 2.0 * float(res.fun), bool(res.success or res.fun < 1e-12)


def fit_cbps(data: Dataset, c_design: DesignMatrix, b_design: DesignMatrix,
             include_score: bool = True, max_iter: int = 500) -> CBPSFit:
    """Two-step GMM propensity fit with covariate-balance moment conditions.

    Step 1 stacks the logistic score for P(D=1|X) with moments requiring the
    inverse-propensity-reweighted controls to match full-sample means of the
    covariate basis.  Step 2, with the step-1 fit frozen, does the same for
    P(D=1|M,X) against the mediator basis.  Identity weighting matrix;
    initialized at the logistic maximum likelihood estimates.
    """
    d = data.d.astype(float)
    n = data.n
    C = c_design.values
    B = b_design.values

    mle_pi = fit_logistic(C, d, model="pi_on_X")

    def moments1(beta):
        p1 = _sigmoid(C @ beta)
        p0 = np.clip(1.0 - p1, 1e-12, None)
        bal = C.T @ ((1.0 - d) / p0 - 1.0) / n
        if not include_score:
            return bal
        score = C.T @ (d - p1) / n
        return np.concatenate([score, bal])

    def jac1(beta):
        p1 = _sigmoid(C @ beta)
        p0 = np.clip(1.0 - p1, 1e-12, None)
        dbal = C.T @ (C * ((1.0 - d) * p1 / p0)[:, None]) / n
        if not include_score:
            return dbal
        dscore = -C.T @ (C * (p1 * (1.0 - p1))[:, None]) / n
        return np.vstack([dscore, dbal])

    just1 = not include_score
    beta, q1, ok1 = _gmm_solve(moments1, jac1, mle_pi.coef, just1, max_iter)
    p1_hat = _sigmoid(C @ beta)
    p0_hat = np.clip(1.0 - p1_hat, 1e-12, None)

    mle_xi = fit_logistic(B, d, model="xi_on_MX")

    def moments2(gamma):
        x1 = _sigmoid(B @ gamma)
        ratio = np.exp(-(B @ gamma))          # xi_0 / xi_1
        bal = B.T @ (d * ratio / p0_hat - (1.0 - d) / p0_hat) / n
        if not include_score:
            return bal
        score = B.T @ (d - x1) / n
        return np.concatenate([score, bal])

    def jac2(gamma):
        x1 = _sigmoid(B @ gamma)
        ratio = np.exp(-(B @ gamma))
        dbal = -B.T @ (B * (d * ratio / p0_hat)[:, None]) / n
        if not include_score:
            return dbal
        dscore = -B.T @ (B * (x1 * (1.0 - x1))[:, None]) / n
        return np.vstack([dscore, dbal])

    gamma, q2, ok2 = _gmm_solve(moments2, jac2, mle_xi.coef, just1, max_iter)
    x1_hat = _sigmoid(B @ gamma)

    return CBPSFit(
        pi_fit=PropensityFit(coef=beta, fitted=p1_hat, model="pi_on_X",
                             converged=ok1),
        xi_fit=PropensityFit(coef=gamma, fitted=x1_hat, model="xi_on_MX",
                             converged=ok2),
        objective_step1=q1,
        objective_step2=q2,
        converged=ok1 and ok2,
    )


def cbps_weights(data: Dataset, c_design: DesignMatrix, b_design: DesignMatrix,
                 orientation: str = "standard", **kwargs) -> WeightSet:
    """CBPS plug-in weights; exchanged orientation refits with arms swapped."""
    if orientation == "standard":
        fit = fit_cbps(data, c_design, b_design, **kwargs)
        pi1, xi1 = fit.pi_fit.fitted, fit.xi_fit.fitted
    else:
        flipped = Dataset(y=data.y, d=1 - data.d, m=data.m, x=data.x,
                          mediator_names=data.mediator_names,
                          covariate_names=data.covariate_names)
        fit = fit_cbps(flipped, c_design, b_design, **kwargs)
        # the refit models P(1 - D = 1 | .); translate back
        pi1, xi1 = 1.0 - fit.pi_fit.fitted, 1.0 - fit.xi_fit.fitted
    ws = _assemble_ratio_weights(data, pi1, xi1, orientation, None, "cbps")
    return ws
