import numpy as np
import pytest

from medweights.data import Dataset, build_basis, raw_spec
from medweights.estimators import (
    ESTIMANDS,
    estimate_eif_type,
    estimate_ipw_type,
    estimate_regression_imputation,
    fit_nuisances,
)
from medweights.penalties import entropy
from medweights.twostep import WeightSet, fit_two_step


def _toy(n=24, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    d = np.tile([0, 1], n // 2)
    m = 0.5 * x + rng.normal(size=n)
    y = 2.0 + x + 0.8 * m + d + rng.normal(size=n)
    return Dataset(y=y, d=d, m=m, x=x.reshape(-1, 1), covariate_names=("x1",))


def _designs(data):
    c = build_basis(data, raw_spec(["x1"]), scope="covariates")
    b = build_basis(data, raw_spec(["x1", "m"]), scope="covariates+mediators")
    return c, b


def _uniform_weights(data, orientation):
    treated = data.d == 1
    m1 = ~treated if orientation == "standard" else treated
    m2 = ~m1
    w1 = np.zeros(data.n)
    w2 = np.zeros(data.n)
    w1[m1] = 1.0 / m1.sum()
    w2[m2] = 1.0 / m2.sum()
    return WeightSet(w1=w1, w2=w2, w1_mask=m1, w2_mask=m2,
                     orientation=orientation, method="uniform")


def _random_weights(data, orientation, rng):
    treated = data.d == 1
    m1 = ~treated if orientation == "standard" else treated
    m2 = ~m1
    w1 = np.zeros(data.n)
    w2 = np.zeros(data.n)
    w1[m1] = rng.uniform(0.2, 1.8, m1.sum())
    w2[m2] = rng.uniform(0.2, 1.8, m2.sum())
    w1 /= w1.sum()
    w2 /= w2.sum()
    return WeightSet(w1=w1, w2=w2, w1_mask=m1, w2_mask=m2,
                     orientation=orientation, method="random")


def test_constant_outcome_gives_constant_levels_zero_effects():
    data = _toy()
    data = Dataset(y=np.full(data.n, 7.0), d=data.d, m=data.m, x=data.x,
                   covariate_names=("x1",))
    c, b = _designs(data)
    nuis = fit_nuisances(data, b, c)
    np.testing.assert_allclose(nuis.mu1, 7.0, atol=1e-10)
    ws, we = _uniform_weights(data, "standard"), _uniform_weights(data, "exchanged")
    for points in (estimate_eif_type(data, ws, we, nuis),
                   estimate_ipw_type(data, ws, we),
                   estimate_regression_imputation(data, nuis)):
        for name in ("theta_10", "theta_01", "theta_1", "theta_0"):
            assert points[name] == pytest.approx(7.0, abs=1e-10)
        for name in ("nde_0", "nde_1", "nie_0", "nie_1", "ate"):
            assert points[name] == pytest.approx(0.0, abs=1e-10)


def test_exact_linear_outcome_fits_with_zero_residuals():
    data = _toy(seed=1)
    c, b = _designs(data)
    y_lin = 3.0 + 2.0 * data.x[:, 0] - 1.0 * data.m[:, 0]
    data_lin = Dataset(y=y_lin, d=data.d, m=data.m, x=data.x,
                       covariate_names=("x1",))
    nuis = fit_nuisances(data_lin, b, c)
    treated = data_lin.d == 1
    np.testing.assert_allclose(nuis.mu1[treated], y_lin[treated], atol=1e-10)


def test_normal_equations_hold():
    data = _toy(seed=2)
    c, b = _designs(data)
    nuis = fit_nuisances(data, b, c)
    treated = data.d == 1
    resid = data.y - nuis.mu1
    np.testing.assert_allclose(b.values[treated].T @ resid[treated], 0, atol=1e-8)
    resid0 = nuis.mu1 - nuis.eta10
    np.testing.assert_allclose(c.values[~treated].T @ resid0[~treated], 0, atol=1e-8)


def test_hand_computed_ols_coefficients():
    # n=10 toy against the normal equations solved longhand
    x = np.array([0.5, -1.2, 0.3, 2.0, -0.7, 1.1, -0.2, 0.9, -1.5, 0.4])
    d = np.array([1, 0, 1, 0, 1, 0, 1, 0, 1, 0])
    m = np.array([0.1, -0.5, 0.7, 1.2, -0.9, 0.3, 0.2, -0.1, -1.1, 0.6])
    y = np.array([1.4, -0.8, 2.1, 3.0, -1.2, 1.8, 0.5, 0.9, -2.0, 1.1])
    data = Dataset(y=y, d=d, m=m, x=x.reshape(-1, 1), covariate_names=("x1",))
    c, b = _designs(data)
    nuis = fit_nuisances(data, b, c)
    tr = d == 1
    Xg = b.values[tr]
    beta = np.linalg.solve(Xg.T @ Xg, Xg.T @ y[tr])
    np.testing.assert_allclose(nuis.coefs["mu1"], beta, atol=1e-10)


def test_ipw_uniform_weights_reduce_to_group_means():
    data = _toy(seed=3)
    ws, we = _uniform_weights(data, "standard"), _uniform_weights(data, "exchanged")
    points = estimate_ipw_type(data, ws, we)
    treated = data.d == 1
    assert points["nde_0"] == pytest.approx(
        data.y[treated].mean() - data.y[~treated].mean())


def test_ipw_location_invariance():
    data = _toy(seed=4)
    rng = np.random.default_rng(5)
    ws, we = _random_weights(data, "standard", rng), _random_weights(data, "exchanged", rng)
    base = estimate_ipw_type(data, ws, we)
    shifted = Dataset(y=data.y + 11.0, d=data.d, m=data.m, x=data.x,
                      covariate_names=("x1",))
    shift = estimate_ipw_type(shifted, ws, we)
    for name in ("nde_0", "nde_1", "nie_0", "nie_1", "ate"):
        assert shift[name] == pytest.approx(base[name], abs=1e-10)


def test_ate_decomposition_identity():
    data = _toy(seed=6)
    c, b = _designs(data)
    nuis = fit_nuisances(data, b, c)
    rng = np.random.default_rng(7)
    ws, we = _random_weights(data, "standard", rng), _random_weights(data, "exchanged", rng)
    for points in (estimate_eif_type(data, ws, we, nuis),
                   estimate_ipw_type(data, ws, we),
                   estimate_regression_imputation(data, nuis)):
        assert points["ate"] == pytest.approx(points["nde_1"] + points["nie_0"],
                                              abs=1e-10)
        assert points["ate"] == pytest.approx(points["nde_0"] + points["nie_1"],
                                              abs=1e-10)


def test_eif_type_matches_spreadsheet_arithmetic():
    # n=8 toy summed term by term with plain Python loops
    x = np.array([0.2, -0.4, 1.0, 0.6, -1.1, 0.8, -0.3, 0.5])
    d = np.array([1, 0, 1, 0, 1, 0, 1, 0])
    m = np.array([0.3, -0.2, 0.9, 0.1, -0.5, 0.7, 0.0, 0.4])
    y = np.array([1.0, 0.2, 2.5, 1.1, -0.7, 1.9, 0.3, 1.2])
    data = Dataset(y=y, d=d, m=m, x=x.reshape(-1, 1), covariate_names=("x1",))
    c, b = _designs(data)
    nuis = fit_nuisances(data, b, c)
    rng = np.random.default_rng(8)
    ws = _random_weights(data, "standard", rng)
    we = _random_weights(data, "exchanged", rng)
    points = estimate_eif_type(data, ws, we, nuis)

    acc = 0.0
    for i in range(8):
        if d[i] == 1:
            acc += ws.w2[i] * (y[i] - nuis.mu1[i])
        else:
            acc += ws.w1[i] * (nuis.mu1[i] - nuis.eta10[i])
    acc += sum(nuis.eta10) / 8
    assert points["theta_10"] == pytest.approx(acc, abs=1e-12)

    acc0 = 0.0
    for i in range(8):
        if d[i] == 0:
            acc0 += ws.w1[i] * (y[i] - nuis.m0[i])
    acc0 += sum(nuis.m0) / 8
    assert points["theta_0"] == pytest.approx(acc0, abs=1e-12)


def _decomposition_truth_dataset(rng, n=60):
    """Binary covariate and mediator with fully enumerable truths."""
    px = 0.4
    x = (rng.random(n) < px).astype(float)
    pd1 = 0.35 + 0.3 * x
    d = (rng.random(n) < pd1).astype(int)
    pm1 = 0.25 + 0.2 * x + 0.3 * d
    m = (rng.random(n) < pm1).astype(float)
    y = 1.0 + 2.0 * x + 1.5 * m + 0.7 * d + rng.normal(size=n)
    if d.min() == d.max():
        raise AssertionError("degenerate draw")
    data = Dataset(y=y, d=d, m=m, x=x.reshape(-1, 1), covariate_names=("x1",))
    # truths under treatment arm 1 with the control mediator law
    mu1 = lambda mm, xx: 1.0 + 2.0 * xx + 1.5 * mm + 0.7
    pm1_ctrl = lambda xx: 0.25 + 0.2 * xx
    eta10 = lambda xx: mu1(1.0, xx) * pm1_ctrl(xx) + mu1(0.0, xx) * (1 - pm1_ctrl(xx))
    theta_10 = eta10(1.0) * px + eta10(0.0) * (1 - px)
    return data, mu1, eta10, theta_10


def test_bias_decomposition_identity_eif_type():
    rng = np.random.default_rng(9)
    for _ in range(5):
        data, mu1, eta10, theta_10 = _decomposition_truth_dataset(rng)
        c, b = _designs(data)
        nuis = fit_nuisances(data, b, c)
        ws = _random_weights(data, "standard", rng)
        we = _random_weights(data, "exchanged", rng)
        points = estimate_eif_type(data, ws, we, nuis)

        xv, mv, y, n = data.x[:, 0], data.m[:, 0], data.y, data.n
        mu1_true = mu1(mv, xv)
        eta_true = eta10(xv)
        mu_tilde = mu1_true - nuis.mu1
        eta_tilde = eta_true - nuis.eta10
        u = y - mu1_true
        v = mu1_true - eta_true

        imb_mu = ws.w2 @ mu_tilde - ws.w1 @ mu_tilde
        imb_eta = ws.w1 @ eta_tilde - eta_tilde.mean()
        noise1 = ws.w2 @ u
        noise2 = ws.w1 @ v
        sampling = eta_true.mean() - theta_10

        total = imb_mu + imb_eta + noise1 + noise2 + sampling
        assert points["theta_10"] - theta_10 == pytest.approx(total, abs=1e-10)


def test_bias_decomposition_identity_ipw_type():
    rng = np.random.default_rng(10)
    for _ in range(5):
        data, mu1, eta10, theta_10 = _decomposition_truth_dataset(rng)
        ws = _random_weights(data, "standard", rng)
        we = _random_weights(data, "exchanged", rng)
        points = estimate_ipw_type(data, ws, we)

        xv, mv, y = data.x[:, 0], data.m[:, 0], data.y
        mu1_true = mu1(mv, xv)
        eta_true = eta10(xv)
        u = y - mu1_true
        v = mu1_true - eta_true

        imb_mu = ws.w2 @ mu1_true - ws.w1 @ mu1_true
        imb_eta = ws.w1 @ eta_true - eta_true.mean()
        noise1 = ws.w2 @ u
        noise2 = ws.w1 @ v
        sampling = eta_true.mean() - theta_10

        total = imb_mu + imb_eta + noise1 + noise2 + sampling
        assert points["theta_10"] - theta_10 == pytest.approx(total, abs=1e-10)


def test_eif_and_ipw_collapse_at_exact_balance():
    data = _toy(n=60, seed=11)
    c, b = _designs(data)
    ws = fit_two_step(data, c, b, 0.0, 0.0, entropy())
    we = fit_two_step(data, c, b, 0.0, 0.0, entropy(), orientation="exchanged")
    nuis = fit_nuisances(data, b, c)
    eif = estimate_eif_type(data, ws, we, nuis)
    ipw = estimate_ipw_type(data, ws, we)
    for name in ESTIMANDS:
        assert eif[name] == pytest.approx(ipw[name], abs=1e-8)
