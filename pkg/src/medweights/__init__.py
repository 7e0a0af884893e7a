"""Two-step minimal-dispersion balancing weights for causal mediation.

The package fits per-unit weights that minimize a convex dispersion penalty
subject to approximate moment-balance constraints (covariates in step 1,
mediator and covariates in step 2), and uses them in augmented and pure
weighting estimators of natural direct and indirect effects, with plug-in
influence-function inference, balance diagnostics, bootstrap tolerance
tuning, and a reproducible Monte Carlo harness.
"""

__version__ = "0.1.0"

from .baselines import (
    PropensityFit,
    cbps_weights,
    eif_weights,
    fit_cbps,
    fit_logistic,
    true_ps_weights,
    xi_from_mediator_model,
)
from .data import (
    BasisSpec,
    BasisTerm,
    ColumnRoles,
    DataError,
    Dataset,
    DesignMatrix,
    build_basis,
    load_csv,
    polynomial_spec,
    raw_spec,
    write_csv,
)
from .diagnostics import BalanceTable, TuningResult, tasmd, tune_tolerances
from .estimators import (
    ESTIMANDS,
    EstimandResult,
    EstimateReport,
    NuisanceFit,
    estimate_eif_type,
    estimate_ipw_type,
    estimate_regression_imputation,
    fit_nuisances,
)
from .inference import (
    InfluenceVector,
    estimate_with_inference,
    influence_theta,
    normal_ci,
    normal_p_value,
    variance_effect,
    variance_theta,
)
from .penalties import Penalty, custom_penalty, entropy, quadratic
from .simulation import (
    MCResult,
    SettingConfig,
    TRUTHS,
    draw,
    replicate_once,
    run_mc,
    setting_config,
)
from .solver import (
    BalancingProblem,
    DualSolution,
    KKTCertificate,
    SolverConfig,
    check_kkt,
    dual_objective,
    primal_objective,
    solve_dual,
)
from .twostep import ConvergenceError, WeightSet, fit_two_step, weights_frame

__all__ = [name for name in dir() if not name.startswith("_")]
