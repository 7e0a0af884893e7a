"""Dual solver for dispersion-penalized approximate balancing problems.

The generic primal is

    minimize    sum_{i in mask} f(w_i)
    subject to  |sum_{i in mask} w_i Phi_ij - t_j| <= tol_j,   j = 1..k.

Its unconstrained dual is ``min_lam  sum_mask rho(Phi_i . lam) - lam . t
+ |lam| . tol``, a smooth convex term plus a separable weighted-L1 term, and
the primal weights are recovered as ``w_i = rho_prime(Phi_i . lam)``.  The
solver runs FISTA with backtracking on the equilibrated problem and
periodically polishes with a guarded Newton step on the active coordinates.
Certificates (duality gap, constraint violations, complementary slackness)
are always reported on the original column scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .penalties import Penalty

__all__ = [
    "BalancingProblem",
    "SolverConfig",
    "DualSolution",
    "KKTCertificate",
    "solve_dual",
    "primal_objective",
    "dual_objective",
    "check_kkt",
]


@dataclass
class SolverConfig:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    res_tol: float = 1e-8
    max_iter: int = 10_000
    step_init: float = 1.0
    acceleration: bool = True


@dataclass(frozen=True)
class BalancingProblem:
    """One balancing step: which units get weights, against which moments.

    ``design`` holds the full n x k term matrix; ``mask`` selects the rows
    that receive weights.  ``target`` and ``tolerances`` are per column.
    ``constant_col`` marks the normalization column (kept even though it has
    zero variance within the mask).
    """

    mask: np.ndarray
    design: np.ndarray
    target: np.ndarray
    tolerances: np.ndarray
    penalty: Penalty
    constant_col: int | None = None
    column_names: tuple[str, ...] | None = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        design = np.asarray(self.design, dtype=float)
        target = np.asarray(self.target, dtype=float)
        tol = np.asarray(self.tolerances, dtype=float)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "tolerances", tol)
        k = design.shape[1]
        if target.shape != (k,) or tol.shape != (k,):
            raise ValueError(
                f"target/tolerances must have length {k}, got "
                f"{target.shape} and {tol.shape}"
            )
        if mask.shape[0] != design.shape[0]:
            raise ValueError("mask length must match design rows")
        if not mask.any():
            raise ValueError("mask selects no rows")
        if np.any(tol < 0):
            raise ValueError("tolerances must be nonnegative")

    def name_of(self, j: int) -> str:
        if self.column_names is not None:
            return self.column_names[j]
        return f"col{j}"


@dataclass
class KKTCertificate:
    violations: np.ndarray          # |sum w Phi_j - t_j| per column
    slack_residuals: np.ndarray     # |lam_j| * (tol_j - violation_j)
    duality_gap: float
    primal_objective: float
    dual_objective: float


@dataclass
class DualSolution:
    lam: np.ndarray                 # dual variables, original column scale
    weights: np.ndarray             # primal weights on masked rows
    iterations: int
    duality_gap: float
    max_violation: float            # max_j (violation_j - tol_j)
    status: str                     # converged | max_iter | infeasible-suspected
    primal_objective: float
    dual_objective: float
    dropped_columns: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    worst_constraints: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def primal_objective(prob: BalancingProblem, weights) -> float:
    """Dispersion objective sum_{mask} f(w_i) for weights on the masked rows."""
    w = np.asarray(weights, dtype=float)
    if w.shape[0] == prob.design.shape[0]:
        w = w[prob.mask]
    return float(np.sum(prob.penalty.f(w)))


def dual_objective(prob: BalancingProblem, lam) -> float:
    """sum_{mask} rho(Phi_i . lam) - lam . t + |lam| . tol (minimized form)."""
    lam = np.asarray(lam, dtype=float)
    phi = prob.design[prob.mask]
    scores = phi @ lam
    with np.errstate(over="ignore"):
        smooth = float(np.sum(prob.penalty.rho(scores)))
    return smooth - float(lam @ prob.target) + float(np.abs(lam) @ prob.tolerances)


def _violations(prob: BalancingProblem, weights_masked: np.ndarray) -> np.ndarray:
    phi = prob.design[prob.mask]
    return phi.T @ weights_masked - prob.target


def check_kkt(prob: BalancingProblem, sol: DualSolution) -> KKTCertificate:
    """Certify a solution: feasibility, complementary slackness, duality gap."""
    viol = np.abs(_violations(prob, sol.weights))
    slack = np.abs(sol.lam) * (prob.tolerances - viol)
    p_obj = primal_objective(prob, sol.weights)
    d_obj = dual_objective(prob, sol.lam)
    return KKTCertificate(
        violations=viol,
        slack_residuals=slack,
        duality_gap=p_obj + d_obj,
        primal_objective=p_obj,
        dual_objective=d_obj,
    )


def _drop_degenerate_columns(prob: BalancingProblem):
    """Columns with zero variance within the mask leave the dual variable
    unidentified along a ray; keep the designated constant, drop the rest."""
    phi = prob.design[prob.mask]
    zero_var = np.ptp(phi, axis=0) == 0.0
    keep = np.ones(phi.shape[1], dtype=bool)
    dropped, warnings = [], []
    if zero_var.any():
        keep_const = prob.constant_col
        if keep_const is None:
            keep_const = int(np.nonzero(zero_var)[0][0])
        for j in np.nonzero(zero_var)[0]:
            if j == keep_const:
                continue
            keep[j] = False
            dropped.append(prob.name_of(j))
            warnings.append(
                f"dropped degenerate column {prob.name_of(j)!r} "
                "(zero variance within mask)"
            )
    return keep, dropped, warnings


def _kkt_residual(grad, lam, tol):
    """First-order residual of the composite dual at lam."""
    res = np.where(
        lam != 0.0,
        np.abs(grad + np.sign(lam) * tol),
        np.maximum(np.abs(grad) - tol, 0.0),
    )
    return float(np.max(res)) if res.size else 0.0


def _newton_polish(pen, phi, t, tol, lam, f_val, max_rounds=40):
    """Guarded active-set Newton refinement of the scaled dual.

    Coordinates with lam_j == 0 whose subgradient condition already holds are
    frozen; the rest take a damped Newton step on the smooth objective plus
    the locally linear L1 term.  A step is accepted when it decreases the
    objective or (near the floor of float precision) the first-order
    residual.
    """
    for _ in range(max_rounds):
        scores = phi @ lam
        w = pen.rho_prime(scores)
        grad = phi.T @ w - t
        res = _kkt_residual(grad, lam, tol)
        if res < 1e-14:
            break
        active = (lam != 0.0) | (np.abs(grad) > tol * (1 + 1e-12))
        if not active.any():
            break
        sign = np.where(lam != 0.0, np.sign(lam), -np.sign(grad))
        g_act = grad[active] + sign[active] * tol[active]
        h = pen.rho_second(scores)
        phi_a = phi[:, active]
        hess = phi_a.T @ (phi_a * h[:, None])
        ridge = 1e-13 * (1.0 + np.trace(hess) / max(1, hess.shape[0]))
        try:
            step = np.linalg.solve(hess + ridge * np.eye(hess.shape[0]), g_act)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        improved = False
        size = 1.0
        for _ls in range(30):
            cand = lam.copy()
            cand[active] = lam[active] - size * step
            scores_c = phi @ cand
            with np.errstate(over="ignore"):
                f_cand = (float(np.sum(pen.rho(scores_c))) - float(cand @ t)
                          + float(np.abs(cand) @ tol))
            if not np.isfinite(f_cand):
                size *= 0.5
                continue
            if f_cand < f_val:
                lam, f_val, improved = cand, f_cand, True
                break
            grad_c = phi.T @ pen.rho_prime(scores_c) - t
            res_c = _kkt_residual(grad_c, cand, tol)
            if f_cand <= f_val + 1e-12 * (abs(f_val) + 1.0) and res_c < res:
                lam, f_val, improved = cand, f_cand, True
                break
            size *= 0.5
        if not improved:
            break
        if np.max(np.abs(step)) * size < 1e-15:
            break
    return lam, f_val


def solve_dual(prob: BalancingProblem, cfg: SolverConfig | None = None) -> DualSolution:
    """Solve the balancing dual and recover certified primal weights.

    Non-convergence is reported through ``status``, not raised; suspected
    infeasibility (diverging dual variables with persistent violations) is
    flagged as ``"infeasible-suspected"`` together with the worst columns.
    """
    cfg = cfg or SolverConfig()
    pen = prob.penalty

    keep, dropped, warn = _drop_degenerate_columns(prob)
    phi_full = prob.design[prob.mask]
    phi = phi_full[:, keep]
    t = prob.target[keep]
    tol = prob.tolerances[keep]

    # column equilibration: an exact reparameterization of the same problem
    scale = np.max(np.abs(phi), axis=0)
    scale[scale == 0.0] = 1.0
    phi_s = phi / scale
    t_s = t / scale
    tol_s = tol / scale

    k = phi_s.shape[1]
    lam = np.zeros(k)

    def smooth_val(v):
        with np.errstate(over="ignore"):
            return float(np.sum(pen.rho(phi_s @ v))) - float(v @ t_s)

    def full_val(v):
        return smooth_val(v) + float(np.abs(v) @ tol_s)

    def smooth_grad(v):
        w = pen.rho_prime(phi_s @ v)
        return phi_s.T @ w - t_s, w

    g_val = smooth_val(lam)
    f_val = g_val
    grad, w = smooth_grad(lam)
    step = cfg.step_init
    z = lam.copy()
    t_mom = 1.0
    status = "max_iter"
    it = 0

    def evaluate(v):
        """Gap / feasibility on the original, full-column problem."""
        w_m = pen.rho_prime(phi_s @ v)
        lam_orig = np.zeros(prob.design.shape[1])
        lam_orig[keep] = v / scale
        viol_full = phi_full.T @ w_m - prob.target
        max_violation = float(np.max(np.abs(viol_full) - prob.tolerances))
        p_obj = float(np.sum(pen.f(w_m)))
        d_obj = full_val(v)
        gap = p_obj + d_obj
        return w_m, lam_orig, viol_full, max_violation, p_obj, d_obj, gap

    for it in range(1, cfg.max_iter + 1):
        grad_z, _ = smooth_grad(z)
        g_z = smooth_val(z)
        if not np.isfinite(g_z):
            # momentum overshot into overflow territory; restart at lam
            z = lam.copy()
            grad_z, _ = smooth_grad(z)
            g_z = smooth_val(z)
            t_mom = 1.0
        accepted = False
        for _bt in range(60):
            cand = _soft_threshold(z - step * grad_z, step * tol_s)
            d = cand - z
            g_cand = smooth_val(cand)
            if np.isfinite(g_cand) and g_cand <= g_z + grad_z @ d + (d @ d) / (2 * step) + 1e-14:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            status = "max_iter"
            break
        f_cand = g_cand + float(np.abs(cand) @ tol_s)
        if cfg.acceleration:
            if f_cand > f_val:
                # function restart
                z = lam.copy()
                t_mom = 1.0
            else:
                t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom**2))
                z = cand + (t_mom - 1.0) / t_next * (cand - lam)
                t_mom = t_next
                lam, f_val = cand, f_cand
        else:
            z = cand
            if f_cand <= f_val:
                lam, f_val = cand, f_cand
        step = min(step * 1.5, 1e12)

        if it % 10 == 0 or it == cfg.max_iter:
            lam, f_val = _newton_polish(pen, phi_s, t_s, tol_s, lam, f_val)
            z = lam.copy()
            t_mom = 1.0
            grad, w = smooth_grad(lam)
            residual = np.max(np.abs(lam - _soft_threshold(lam - grad, tol_s)))
            _, _, _, max_violation, p_obj, d_obj, gap = evaluate(lam)
            if (residual <= cfg.res_tol
                    and abs(gap) <= cfg.gap_tol * (abs(p_obj) + 1.0)
                    and max_violation <= cfg.feas_tol):
                status = "converged"
                break
            if (np.max(np.abs(lam)) > 1e10
                    and max_violation > max(100 * cfg.feas_tol, 1e-6)):
                status = "infeasible-suspected"
                break

    w_m, lam_orig, viol_full, max_violation, p_obj, d_obj, gap = evaluate(lam)
    worst = []
    if status != "converged":
        excess = np.abs(viol_full) - prob.tolerances
        order = np.argsort(excess)[::-1][:3]
        worst = [(prob.name_of(int(j)), float(excess[j])) for j in order
                 if excess[j] > cfg.feas_tol]
    return DualSolution(
        lam=lam_orig,
        weights=w_m,
        iterations=it,
        duality_gap=gap,
        max_violation=max_violation,
        status=status,
        primal_objective=p_obj,
        dual_objective=d_obj,
        dropped_columns=dropped,
        warnings=warn,
        worst_constraints=worst,
    )
