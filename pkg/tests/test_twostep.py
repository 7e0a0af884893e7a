import numpy as np
import pytest

from medweights.data import Dataset, build_basis, raw_spec
from medweights.penalties import entropy, quadratic
from medweights.twostep import ConvergenceError, fit_two_step, weights_frame

from oracles import zeta_by_minimization


def _toy(n=8, seed=0):
    # continuous mediator keeps exact joint balance feasible at small n
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    d = np.array([0, 1] * (n // 2))
    m = 0.4 * x + rng.normal(size=n)
    y = x + m + d + rng.normal(size=n)
    return Dataset(y=y, d=d, m=m, x=x.reshape(-1, 1), covariate_names=("x1",))


def _binary_mediator_toy():
    # hand-built so both steps are comfortably feasible at zero tolerance
    x = np.array([-1.5, -0.5, 0.5, 1.5, -1.6, -0.4, 0.4, 1.6])
    d = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    m = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0])
    y = x + m + d
    return Dataset(y=y, d=d, m=m, x=x.reshape(-1, 1), covariate_names=("x1",))


def _bases(data, c_cols=("x1",), with_m=True):
    c = build_basis(data, raw_spec(c_cols), scope="covariates")
    b_cols = list(c_cols) + (["m"] if with_m else [])
    b = build_basis(data, raw_spec(b_cols), scope="covariates+mediators")
    return c, b


def test_constant_only_bases_give_uniform_weights():
    data = _toy()
    c = build_basis(data, raw_spec([]), scope="covariates")
    b = build_basis(data, raw_spec([]), scope="covariates+mediators")
    ws = fit_two_step(data, c, b, eps=0.0, delta=0.0, penalty=entropy())
    nc, nt = data.n_control, data.n_treated
    np.testing.assert_allclose(ws.w1_group, np.full(nc, 1 / nc), atol=1e-10)
    np.testing.assert_allclose(ws.w2_group, np.full(nt, 1 / nt), atol=1e-10)


def test_exact_balance_feasibility_toy():
    data = _binary_mediator_toy()
    c, b = _bases(data)
    ws = fit_two_step(data, c, b, eps=0.0, delta=0.0, penalty=entropy())
    # weighted control covariate mean equals full-sample mean
    got = c.values[ws.w1_mask].T @ ws.w1_group
    np.testing.assert_allclose(got, c.values.mean(axis=0), atol=1e-8)
    # weighted treated (m, x) means equal reweighted-control means
    lhs = b.values[ws.w2_mask].T @ ws.w2_group
    rhs = b.values[ws.w1_mask].T @ ws.w1_group
    np.testing.assert_allclose(lhs, rhs, atol=1e-8)


def test_group_sums_are_one():
    data = _toy(n=12, seed=5)
    c, b = _bases(data)
    for pen in (entropy(), quadratic(n_ref=6)):
        ws = fit_two_step(data, c, b, eps=0.01, delta=0.01, penalty=pen)
        assert ws.w1.sum() == pytest.approx(1.0, abs=1e-10)
        assert ws.w2.sum() == pytest.approx(1.0, abs=1e-10)


def test_entropy_weights_positive():
    data = _toy(n=16, seed=6)
    c, b = _bases(data)
    ws = fit_two_step(data, c, b, eps=0.0, delta=0.0, penalty=entropy())
    assert np.all(ws.w1_group > 0)
    assert np.all(ws.w2_group > 0)


def test_pipeline_is_bit_reproducible():
    data = _toy(n=10, seed=7)
    c, b = _bases(data)
    a = fit_two_step(data, c, b, eps=0.005, delta=0.005, penalty=entropy())
    bb = fit_two_step(data, c, b, eps=0.005, delta=0.005, penalty=entropy())
    assert np.array_equal(a.w1, bb.w1)
    assert np.array_equal(a.w2, bb.w2)


def test_perturbing_eps_changes_step2_targets():
    data = _toy(n=20, seed=8)
    c, b = _bases(data)
    tight = fit_two_step(data, c, b, eps=0.0, delta=0.0, penalty=entropy())
    loose = fit_two_step(data, c, b, eps=0.2, delta=0.0, penalty=entropy())
    assert not np.allclose(tight.w1, loose.w1)
    # step-2 targets are weighted sums of w1, so w2 moves as well
    assert not np.allclose(tight.w2, loose.w2)


def test_exchange_symmetry_under_label_flip():
    data = _toy(n=40, seed=9)
    flipped = Dataset(y=data.y, d=1 - data.d, m=data.m, x=data.x,
                      covariate_names=data.covariate_names)
    c, b = _bases(data)
    cf = build_basis(flipped, c.spec, scope="covariates")
    bf = build_basis(flipped, b.spec, scope="covariates+mediators")
    exch = fit_two_step(data, c, b, 0.0, 0.0, entropy(), orientation="exchanged")
    std = fit_two_step(flipped, cf, bf, 0.0, 0.0, entropy(), orientation="standard")
    np.testing.assert_allclose(exch.w1, std.w1, atol=1e-12)
    np.testing.assert_allclose(exch.w2, std.w2, atol=1e-12)


def test_balance_implication_for_linear_combinations():
    rng = np.random.default_rng(10)
    data = _toy(n=30, seed=11)
    c, b = _bases(data)
    delta = 0.05
    ws = fit_two_step(data, c, b, eps=0.0, delta=delta, penalty=entropy())
    delta_vec = ws.tolerances_used[1]
    for _ in range(25):
        beta = rng.normal(size=b.k)
        lhs = ws.w2 @ (b.values @ beta)
        rhs = ws.w1 @ (b.values @ beta)
        assert abs(lhs - rhs) <= np.abs(beta) @ delta_vec + 1e-8


def test_scalar_tolerance_broadcasts_to_nonconstant_columns():
    data = _toy(n=30, seed=12)
    c, b = _bases(data)
    ws = fit_two_step(data, c, b, eps=0.07, delta=0.03, penalty=entropy())
    eps_vec, delta_vec = ws.tolerances_used
    assert eps_vec[-1] == 0.0 and delta_vec[-1] == 0.0
    assert np.all(eps_vec[:-1] == 0.07)
    assert np.all(delta_vec[:-1] == 0.03)


def test_missing_constant_column_rejected():
    data = _toy()
    c = build_basis(data, raw_spec(["x1"], include_constant=False), scope="covariates")
    b = build_basis(data, raw_spec(["x1", "m"]), scope="covariates+mediators")
    with pytest.raises(ValueError, match="constant"):
        fit_two_step(data, c, b, 0.0, 0.0, entropy())


def test_infeasible_step_reports_step_label():
    # disjoint mediator supports make step 2 infeasible at zero tolerance
    y = np.zeros(8)
    d = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    m = np.array([5.0, 5.0, 5.0, 5.0, 0.0, 0.0, 0.0, 0.25])
    x = np.array([-1.0, -0.3, 0.3, 1.0, -1.0, -0.3, 0.3, 1.0]).reshape(-1, 1)
    data = Dataset(y=y, d=d, m=m, x=x, covariate_names=("x1",))
    c, b = _bases(data)
    with pytest.raises(ConvergenceError, match="step 2"):
        fit_two_step(data, c, b, 0.0, 0.0, entropy())


def test_first_step_zeta_parameterization_agrees():
    # the opposite-sign dual with the zeta transform recovers the same
    # step-1 weights; optimize its smooth split form independently
    from scipy.optimize import minimize

    data = _toy(n=30, seed=13)
    c, _ = _bases(data)
    ws = fit_two_step(data, c, build_basis(data, raw_spec(["x1", "m"]),
                                           scope="covariates+mediators"),
                      eps=0.02, delta=0.0, penalty=entropy())
    pen = entropy().with_n_ref(data.n_control)
    controls = data.d == 0
    phi = c.values[controls]
    target = c.values.mean(axis=0)
    eps_vec = ws.tolerances_used[0]
    k = c.k

    def objective(z):
        th = z[:k] - z[k:]
        scores = phi @ th
        return (-np.sum(pen.zeta(scores)) + th @ target + (z[:k] + z[k:]) @ eps_vec)

    res = minimize(objective, np.zeros(2 * k), method="L-BFGS-B",
                   bounds=[(0, None)] * (2 * k),
                   options={"ftol": 1e-16, "gtol": 1e-12, "maxiter": 5000})
    theta = res.x[:k] - res.x[k:]
    w_zeta = pen.zeta_prime(phi @ theta)
    w_zeta = w_zeta / w_zeta.sum()
    np.testing.assert_allclose(ws.w1_group, w_zeta, atol=1e-6)


def test_zeta_oracle_consistency_on_step1_scores():
    # spot-check the zeta values feeding the parameterization test
    pen = entropy().with_n_ref(5)
    for y in (-0.7, 0.1, 1.3):
        assert float(pen.zeta(y)) == pytest.approx(
            zeta_by_minimization(pen, y, 5), abs=1e-6)


def test_weights_frame_layout():
    data = _toy(n=8, seed=14)
    c, b = _bases(data)
    ws = fit_two_step(data, c, b, 0.0, 0.0, entropy())
    frame = weights_frame(ws)
    assert list(frame.columns) == ["row_id", "group", "step", "weight"]
    assert len(frame) == data.n
    by_step = frame.groupby("step")["weight"].sum()
    assert by_step[1] == pytest.approx(1.0)
    assert by_step[2] == pytest.approx(1.0)
    assert set(frame[frame.step == 1].group) == {"control"}
