import numpy as np
import pytest
from scipy import integrate, stats

from nonignorable_hte.core import logistic
from nonignorable_hte.estimands import (
    EstimandSummary,
    HteCurve,
    UndefinedEstimandError,
    expected_treated_outcome,
    hte_curve,
    hte_values,
    normalized_odds,
    odds_weights,
    policy_welfare,
    posterior_estimands,
)
from nonignorable_hte.gmm import AuxiliaryMoments, SingularWeightError
from nonignorable_hte.model import Dataset, UnitRecord, true_estimand_oracle
from nonignorable_hte.simulate import SimulationConfig, simulate

from conftest import frozen_draws


def test_summary_interval_order():
    s = EstimandSummary.from_samples([1.0, 2.0, 3.0, 10.0])
    assert s.ci95[0] <= s.ci95[1]
    with pytest.raises(ValueError):
        EstimandSummary(0.0, 1.0, (1.0, 0.0))


def test_hte_at_truth(truth, large_study):
    curve = hte_curve(frozen_draws(truth), large_study, grid=[0.0, 1.0, 2.0])
    assert curve.mean[1] == pytest.approx(0.9, abs=0.02)
    oracle = true_estimand_oracle(truth, mc_draws=10).hte
    assert np.allclose(curve.mean, oracle(np.array([0.0, 1.0, 2.0])), atol=0.03)


def test_hte_without_covariate_effect(truth, small_study):
    p = truth.replace(theta11=0.0)
    grid = np.linspace(-1, 3, 9)
    curve = hte_curve(frozen_draws(p), small_study, grid)
    assert np.allclose(curve.mean, p.theta10 + p.theta12 * grid + p.theta13 * grid * grid - grid, rtol=0, atol=1e-14)


def test_hte_flags_underflow(truth, small_study):
    vals, flagged = hte_values(truth.to_array(), small_study.x[:, 0], np.array([0.0, 1.0, 500.0]))
    assert flagged.tolist() == [False, False, True]
    curve = hte_curve(frozen_draws(truth), small_study, [0.0, 1.0, 500.0])
    assert np.isnan(curve.mean[2])
    assert "NA" in curve.to_csv().splitlines()[3]


def test_band_wider_at_the_right_edge(truth, small_study):
    rng = np.random.default_rng(0)
    rows = truth.to_array() + 0.05 * rng.standard_normal((200, 11))
    rows[:, 6:8] = np.abs(rows[:, 6:8])
    draws = frozen_draws(truth, copies=200)
    draws = type(draws)(draws.names, rows, 0, 200, 0, {}, 0)
    y0 = small_study.y[small_study.y0_observed]
    grid = np.percentile(y0, [50, 99])
    curve = hte_curve(draws, small_study, grid, keep_draws=True)
    var = curve.per_draw.var(axis=0)
    assert var[1] >= var[0]
    assert np.all(curve.band95[:, 0] <= curve.band95[:, 1])


def test_curve_csv_columns(truth, small_study):
    text = hte_curve(frozen_draws(truth), small_study, [0.0, 1.0]).to_csv()
    assert text.splitlines()[0] == "y0,mean,lo95,hi95"
    with pytest.raises(ValueError):
        HteCurve(np.array([1.0, 0.0]), np.zeros(2), np.zeros((2, 2)), np.zeros(2, bool))


def test_ate_at_truth(truth, large_study):
    post = posterior_estimands(frozen_draws(truth), large_study)
    assert post["ate"].mean == pytest.approx(0.688, abs=0.02)


def test_ate_with_constant_treated_mean(truth, small_study):
    p = truth.replace(theta11=0.0, theta12=0.0, theta13=0.0)
    aux = AuxiliaryMoments(0.97, [0.0], 0.5)
    post = posterior_estimands(frozen_draws(p), small_study, aux)
    assert post["ate"].mean == pytest.approx(p.theta10 - 0.97, abs=1e-12)


def test_expected_treated_outcome_closed_form(truth):
    x = np.array([-1.0, 0.0, 2.0])
    mu0 = truth.mu0(x)
    exact = truth.theta10 + truth.theta11 * x + truth.theta12 * mu0 + truth.theta13 * (mu0**2 + truth.sigma0**2)
    assert np.allclose(expected_treated_outcome(truth.to_array(), x), exact, atol=1e-12)


def test_att_latents_agree_with_odds_weights(truth):
    data = simulate(SimulationConfig(10_000, truth, seed=17))
    # exact draws of the missing y0 from their full conditional, by inverse cdf on a dense grid
    rng = np.random.default_rng(4)
    t = data.treated
    x_t, y1_t = data.x[t, 0], data.y[t]
    grid = np.linspace(-4, 6, 4001)
    latent = np.empty((2, t.sum()))
    for i, (x, y1) in enumerate(zip(x_t, y1_t)):
        logd = (
            stats.norm.logpdf(y1, truth.mu1(grid, x), truth.sigma1)
            + stats.norm.logpdf(grid, truth.mu0(x), truth.sigma0)
            + np.log(logistic(truth.propensity_index(grid, x)))
        )
        cdf = np.cumsum(np.exp(logd - logd.max()))
        latent[:, i] = np.interp(rng.random(2) * cdf[-1], cdf, grid)
    with_latent = posterior_estimands(frozen_draws(truth, copies=2, latent=latent), data)
    with_odds = posterior_estimands(frozen_draws(truth, copies=2), data)
    assert with_latent["att"].mean == pytest.approx(with_odds["att"].mean, abs=0.02)
    # odds-weighted untreated y0 matches the latent mean of treated y0
    assert odds_weights(data, truth) @ data.y[data.offered_untreated] == pytest.approx(latent.mean(), abs=0.02)


def test_mixture_identity(truth):
    data = simulate(SimulationConfig(40_000, truth, seed=23, arm_prob=0.999))
    post = posterior_estimands(frozen_draws(truth, copies=1), data)
    pz1 = data.z[data.r].mean()
    mix = pz1 * post["att"].mean + (1 - pz1) * post["atu"].mean
    assert mix == pytest.approx(post["ate"].mean, abs=0.02)


def test_no_treated_units(truth):
    units = [UnitRecord("1", (0.0,), 1, 0, None, 1.0), UnitRecord("2", (0.0,), 0, None, None, 1.0)]
    with pytest.raises(UndefinedEstimandError):
        posterior_estimands(frozen_draws(truth), Dataset.from_units(units))


def test_odds_weight_examples():
    assert np.allclose(normalized_odds([0.5, 0.5, 0.5]), 1 / 3)
    assert normalized_odds([0.8, 0.2]) == pytest.approx([0.941176, 0.058824], abs=1e-6)
    with pytest.raises(SingularWeightError):
        normalized_odds([1.0, 0.5])


def test_odds_weights_match_propensity(truth, small_study):
    w = odds_weights(small_study, truth)
    mask = small_study.offered_untreated
    p = logistic(truth.propensity_index(small_study.y[mask], small_study.x[mask, 0]))
    assert np.allclose(w, normalized_odds(p))
    assert w.sum() == pytest.approx(1.0)


def test_policy_welfare_extremes(truth, small_study):
    draws = frozen_draws(truth)
    x = small_study.x[:, 0]
    empty = policy_welfare(lambda row: False, draws, small_study)
    full = policy_welfare(lambda row: True, draws, small_study)
    assert empty.mean == pytest.approx(np.mean(truth.mu0(x)), abs=1e-12)
    assert full.mean == pytest.approx(expected_treated_outcome(truth.to_array(), x).mean(), abs=1e-12)
    post = posterior_estimands(draws, small_study)
    assert full.mean - empty.mean == pytest.approx(post["ate"].mean, abs=1e-10)


def test_policy_welfare_monte_carlo(truth, large_study):
    w = policy_welfare(lambda row: row[0] > 0, frozen_draws(truth), large_study).mean
    rng = np.random.default_rng(9)
    x = np.repeat(large_study.x[:, 0], 50)
    y0 = truth.mu0(x) + truth.sigma0 * rng.standard_normal(x.size)
    y1 = truth.mu1(y0, x) + truth.sigma1 * rng.standard_normal(x.size)
    assert np.mean(np.where(x > 0, y1, y0)) == pytest.approx(w, abs=0.01)


def test_hte_integrates_to_ate(truth, large_study):
    aux_mean = float(np.mean(truth.mu0(large_study.x[:, 0])))
    ate = posterior_estimands(frozen_draws(truth), large_study)["ate"].mean
    sd = np.sqrt(truth.theta01**2 * large_study.x[:, 0].var() + truth.sigma0**2)
    grid = np.linspace(aux_mean - 7 * sd, aux_mean + 7 * sd, 1401)
    vals, flagged = hte_values(truth.to_array(), large_study.x[:, 0], grid)
    mu0 = truth.mu0(large_study.x[:, 0])
    # mixture density of y0 over the same covariate sample the curve reweights
    dens = sum(stats.norm.pdf(grid[:, None], m[None, :], truth.sigma0).sum(axis=1) for m in np.array_split(mu0, 20)) / mu0.size
    assert not flagged[np.abs(grid - aux_mean) < 4 * sd].any()
    ok = ~flagged
    total = integrate.trapezoid(vals[ok] * dens[ok], grid[ok])
    assert total == pytest.approx(ate, abs=0.01)
