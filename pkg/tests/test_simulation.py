import numpy as np
import pytest
import scipy.special
from numpy.polynomial.hermite_e import hermegauss

from medweights.simulation import (
    TRUTHS,
    draw,
    replicate_once,
    run_mc,
    setting_config,
)


def test_outcome_baseline_level():
    # with all latents at zero and no mediator/treatment, the outcome sits
    # at its additive intercept
    data, _, _ = draw("ts2012", 50_000, seed=0, rep=0)
    z = data.x[:, :4]
    resid = data.y - (27.4 * z[:, 0] + 13.7 * (z[:, 1] + z[:, 2] + z[:, 3])
                      + data.m[:, 0] + data.d)
    assert resid.mean() == pytest.approx(210.0, abs=0.05)


def test_treatment_share_is_half_at_origin():
    data, pi1, _ = draw("ts2012", 200_000, seed=1, rep=0)
    # the treatment logit is centered: P(D=1) = 1/2 marginally
    assert pi1.mean() == pytest.approx(0.5, abs=0.005)
    assert data.d.mean() == pytest.approx(0.5, abs=0.01)


def test_ts_mean_outcome_matches_quadrature_oracle():
    # E[Y] = 210 + P(M=1) + P(D=1); the mediator margin integrates the two
    # correlated Gaussian indices with Gauss-Hermite quadrature
    nodes, weights = hermegauss(80)
    weights = weights / np.sqrt(2 * np.pi)
    var_s, var_t = 3.06, 1.3225
    cov_st = -1.375
    sd_s, sd_t = np.sqrt(var_s), np.sqrt(var_t)
    rho = cov_st / (sd_s * sd_t)
    pm = 0.0
    for u, wu in zip(nodes, weights):
        t_val = sd_t * u
        p_d1 = scipy.special.expit(t_val)
        mu_s = 0.5 + rho * sd_s * u
        sd_cond = sd_s * np.sqrt(1 - rho**2)
        s_vals = mu_s + sd_cond * nodes
        pm_d1 = scipy.special.expit(s_vals - 1.5) @ weights
        pm_d0 = scipy.special.expit(s_vals) @ weights
        pm += wu * (p_d1 * pm_d1 + (1 - p_d1) * pm_d0)
    expected = 210.0 + pm + 0.5

    n = 1_000_000
    data, _, _ = draw("ts2012", n, seed=2, rep=0)
    se = data.y.std() / np.sqrt(n)
    assert abs(data.y.mean() - expected) < 3 * se


def test_wc_direct_effect_contrast_is_zero():
    n = 1_000_000
    data, _, _ = draw("wc2018", n, seed=3, rep=0)
    z = data.x[:, :4]
    signal = 27.4 * z[:, 0] + 13.7 * (z[:, 1] + z[:, 2] + z[:, 3])
    contrast = 1.5 * signal          # potential-outcome difference Y_1m - Y_0m
    se = contrast.std() / np.sqrt(n)
    assert abs(contrast.mean()) < 3 * se
    assert TRUTHS["wc2018"]["nde_1"] == 0.0


def test_true_xi_is_calibrated():
    # among units with given (m, xi) the empirical treatment share matches xi
    data, pi1, xi1 = draw("ts2012", 400_000, seed=4, rep=0)
    bins = np.linspace(0, 1, 21)
    idx = np.digitize(xi1, bins)
    for b in np.unique(idx):
        sel = idx == b
        if sel.sum() < 5000:
            continue
        assert data.d[sel].mean() == pytest.approx(xi1[sel].mean(), abs=0.01)


def test_draws_are_reproducible_and_distinct():
    a1, p1, x1 = draw("ts2012", 100, seed=5, rep=7)
    a2, p2, x2 = draw("ts2012", 100, seed=5, rep=7)
    b, _, _ = draw("ts2012", 100, seed=5, rep=8)
    assert np.array_equal(a1.y, a2.y) and np.array_equal(p1, p2)
    assert not np.array_equal(a1.y, b.y)


def test_setting_configs_column_counts():
    cfg = setting_config("ts2012", "A")
    assert len(cfg.balance1.terms) == 5          # z1..z4 + const
    assert len(cfg.balance2.terms) == 6          # + mediator
    cfg_b = setting_config("ts2012", "B")
    assert len(cfg_b.balance1.terms) == 9        # x1..x4 + z1..z4 + const
    wc_b = setting_config("wc2018", "B")
    assert len(wc_b.balance1.terms) == 15        # x1..x10 + z1..z4 + const
    assert len(wc_b.balance2.terms) == 20        # + m + 4 interactions
    names = [t.name for t in wc_b.balance2.terms]
    assert "m*z1" in names and "m*z4" in names
    with pytest.raises(ValueError):
        setting_config("wc2018", "C")


def test_run_mc_deterministic_and_worker_invariant():
    kw = dict(n=200, methods=("mw", "ri"), reps=6, seed=9)
    a = run_mc("ts2012", "A", workers=1, **kw)
    b = run_mc("ts2012", "A", workers=2, **kw)
    assert a.cells == b.cells
    c = run_mc("ts2012", "A", workers=1, **kw)
    assert a.cells == c.cells


def test_run_mc_mse_identity():
    res = run_mc("ts2012", "A", 200, ("mw",), reps=10, seed=10)
    for key in res.cells:
        for estimand in ("nde_0", "nde_1"):
            cell = res.cells[key][estimand]
            mean, var = cell["mean"], cell["var"]
            truth = TRUTHS["ts2012"][estimand]
            assert cell["mse"] == pytest.approx((mean - truth) ** 2 + var,
                                                abs=1e-12)


def test_run_mc_counts_failures():
    # n=30 with exact simultaneous balance fails regularly; the engine must
    # report, not hide, those replications
    res = run_mc("ts2012", "A", 30, ("mw",), reps=30, seed=11)
    used = res.cells.get("mw/eif", {}).get("nde_1", {}).get("reps_used", 0)
    assert used + res.failures.get("mw", 0) == 30
    if res.failures:
        assert res.failure_messages


def test_run_mc_rejects_unknown_method():
    with pytest.raises(ValueError, match="unknown methods"):
        run_mc("ts2012", "A", 100, ("bogus",), reps=2, seed=1)


def test_replicate_once_collects_intervals():
    est, errs, ivs = replicate_once("ts2012", "A", 300, ("mw",), seed=12,
                                    rep=0, collect_inference=True)
    assert not errs
    lo, hi = ivs["mw/eif"]["nde_1"]
    assert lo < est["mw/eif"]["nde_1"] < hi
