"""Two-step minimal-dispersion balancing weights.

Step 1 reweights one treatment arm so its covariate moments match the full
sample; Step 2 reweights the opposite arm so its mediator-and-covariate
moments match the step-1 reweighted arm.  The ``standard`` orientation puts
step 1 on the controls and step 2 on the treated; ``exchanged`` swaps the
arms throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import Dataset, DesignMatrix
from .penalties import Penalty
from .solver import BalancingProblem, DualSolution, SolverConfig, solve_dual

__all__ = ["WeightSet", "ConvergenceError", "fit_two_step", "weights_frame"]


class ConvergenceError(RuntimeError):
    """A balancing solve failed to certify; carries the solver diagnostics."""

    def __init__(self, message: str, solution: DualSolution | None = None):
        super().__init__(message)
        self.solution = solution


@dataclass
class WeightSet:
    """Fitted per-unit weights for one orientation.

    ``w1`` and ``w2`` are full-length vectors (zero off their group): with
    the standard orientation ``w1`` lives on controls and ``w2`` on treated;
    exchanged swaps the supports.  Each group's weights sum to one whenever
    the normalization constraint is active.
    """

    w1: np.ndarray
    w2: np.ndarray
    w1_mask: np.ndarray
    w2_mask: np.ndarray
    orientation: str = "standard"
    method: str = "mw"
    tolerances_used: tuple = ()
    certificates: tuple = ()

    @property
    def w1_group(self) -> np.ndarray:
        return self.w1[self.w1_mask]

    @property
    def w2_group(self) -> np.ndarray:
        return self.w2[self.w2_mask]


def _resolve_tolerance(tol, design: DesignMatrix, label: str) -> np.ndarray:
    """Broadcast a scalar tolerance over the non-constant columns; the
    normalization column is always pinned to zero."""
    k = design.k
    const = design.constant_index
    out = np.zeros(k)
    tol_arr = np.asarray(tol, dtype=float)
    if tol_arr.ndim == 0:
        for j in range(k):
            if j != const:
                out[j] = float(tol_arr)
    elif tol_arr.shape == (k,):
        out = tol_arr.copy()
        if const is not None and out[const] != 0.0:
            raise ValueError(f"{label}: tolerance for the constant column must be 0")
    elif const is not None and tol_arr.shape == (k - 1,):
        out[:const] = tol_arr
    else:
        raise ValueError(
            f"{label}: tolerance must be a scalar or have length {k}"
            + (f" (or {k - 1} excluding the constant)" if const is not None else "")
        )
    if np.any(out < 0):
        raise ValueError(f"{label}: tolerances must be nonnegative")
    return out


def _solve_step(mask, design: DesignMatrix, target, tol, penalty, cfg, label):
    prob = BalancingProblem(
        mask=mask,
        design=design.values,
        target=target,
        tolerances=tol,
        penalty=penalty,
        constant_col=design.constant_index,
        column_names=design.column_names,
    )
    sol = solve_dual(prob, cfg)
    if not sol.converged:
        worst = ", ".join(f"{n} (+{e:.2e})" for n, e in sol.worst_constraints) or "none"
        raise ConvergenceError(
            f"{label}: solver status {sol.status!r} after {sol.iterations} "
            f"iterations; worst constraints: {worst}",
            solution=sol,
        )
    return sol


def fit_two_step(data: Dataset, c_basis: DesignMatrix, b_basis: DesignMatrix,
                 eps, delta, penalty: Penalty, orientation: str = "standard",
                 config: SolverConfig | None = None) -> WeightSet:
    """Fit both balancing steps and return a certified weight set.

    Parameters
    ----------
    c_basis : covariates-only design (step-1 moments).
    b_basis : covariates-and-mediator design (step-2 moments).
    eps, delta : scalar or per-column tolerance for steps 1 and 2.
    orientation : ``"standard"`` (step 1 on controls) or ``"exchanged"``.

    Both designs should carry a trailing constant column so the weights are
    normalized; each group's weights then sum to one exactly.
    """
    if orientation not in ("standard", "exchanged"):
        raise ValueError(f"unknown orientation {orientation!r}")
    if not c_basis.spec.has_constant or not b_basis.spec.has_constant:
        raise ValueError("bases must include a constant column for normalization; "
                         "build them with include_constant=True")
    treated = data.d == 1
    step1_mask = ~treated if orientation == "standard" else treated
    step2_mask = ~step1_mask

    eps_vec = _resolve_tolerance(eps, c_basis, "step 1")
    delta_vec = _resolve_tolerance(delta, b_basis, "step 2")

    pen1 = penalty.with_n_ref(int(step1_mask.sum()))
    pen2 = penalty.with_n_ref(int(step2_mask.sum()))

    target1 = c_basis.values.mean(axis=0)
    sol1 = _solve_step(step1_mask, c_basis, target1, eps_vec, pen1, config,
                       f"step 1 ({orientation})")
    w1 = np.zeros(data.n)
    w1[step1_mask] = sol1.weights
    s = w1.sum()
    if s > 0:
        w1 = w1 / s

    target2 = b_basis.values[step1_mask].T @ w1[step1_mask]
    sol2 = _solve_step(step2_mask, b_basis, target2, delta_vec, pen2, config,
                       f"step 2 ({orientation})")
    w2 = np.zeros(data.n)
    w2[step2_mask] = sol2.weights
    s = w2.sum()
    if s > 0:
        w2 = w2 / s

    return WeightSet(
        w1=w1,
        w2=w2,
        w1_mask=step1_mask,
        w2_mask=step2_mask,
        orientation=orientation,
        method="mw",
        tolerances_used=(eps_vec, delta_vec),
        certificates=(sol1, sol2),
    )


def weights_frame(ws: WeightSet) -> pd.DataFrame:
    """Long-format table of fitted weights: row_id, group, step, weight."""
    step1_group = "control" if ws.orientation == "standard" else "treated"
    step2_group = "treated" if ws.orientation == "standard" else "control"
    rows = []
    for step, group, w, mask in ((1, step1_group, ws.w1, ws.w1_mask),
                                 (2, step2_group, ws.w2, ws.w2_mask)):
        for i in np.nonzero(mask)[0]:
            rows.append({"row_id": int(i), "group": group, "step": step,
                         "weight": float(w[i])})
    return pd.DataFrame(rows, columns=["row_id", "group", "step", "weight"])
