import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from nonignorable_hte.core import gauss_hermite_rule, logistic, normal_logpdf
from nonignorable_hte.likelihood import (
    GaussianLikelihood,
    NumericalError,
    PriorSpec,
    augmented_log_posterior,
    control_unit_loglik,
    log_prior,
    marginal_log_posterior,
    treated_unit_loglik,
    y0mis_full_conditional_logdensity,
)
from nonignorable_hte.model import ContractError, Dataset, ShapeError, UnitRecord


def linear_gaussian_closed_form(y1, x, p):
    """beta2 = theta13 = 0: y1 | x is Normal and the propensity leaves the integral."""
    mean = p.theta10 + p.theta11 * x + p.theta12 * p.mu0(x)
    sd = np.sqrt(p.theta12**2 * p.sigma0**2 + p.sigma1**2)
    return np.log(logistic(p.beta0 + p.beta1 * x)) + stats.norm.logpdf(y1, mean, sd)


def test_beta2_zero_factorization(truth):
    p = truth.replace(beta2=0.0, theta13=0.0)
    for y1, x in [(2.0, 0.5), (5.0, -2.0), (-1.0, 3.0), (0.0, 0.0)]:
        assert treated_unit_loglik(y1, x, p) == pytest.approx(linear_gaussian_closed_form(y1, x, p), abs=1e-10)


def test_treated_matches_monte_carlo(truth):
    rng = np.random.default_rng(3)
    y0 = truth.mu0(0.5) + truth.sigma0 * rng.standard_normal(1_000_000)
    f = np.exp(normal_logpdf(2.0, truth.mu1(y0, 0.5), truth.sigma1)) * logistic(truth.propensity_index(y0, 0.5))
    assert treated_unit_loglik(2.0, 0.5, truth) == pytest.approx(np.log(f.mean()), abs=1e-3)


def test_quadrature_order_invariance(truth):
    for y1, x in [(2.0, 0.5), (0.0, -1.0), (3.5, 2.0)]:
        a = treated_unit_loglik(y1, x, truth, gauss_hermite_rule(32))
        b = treated_unit_loglik(y1, x, truth, gauss_hermite_rule(64))
        assert abs(a - b) < 1e-8


def test_treated_non_finite_raises(truth):
    with pytest.raises(NumericalError) as err, np.errstate(over="ignore"):
        treated_unit_loglik(1e200, 0.0, truth)
    assert "psi" in err.value.payload


def test_control_unit_example(truth):
    expected = stats.norm.logpdf(1.0, 1.0, 0.5) + np.log(1 - 0.354344)
    assert control_unit_loglik(1.0, 0.0, truth) == pytest.approx(expected, abs=1e-6)
    assert logistic(-0.6) == pytest.approx(0.354344, abs=1e-6)


def test_control_unit_limit(truth):
    p = truth.replace(beta0=-1e4)
    assert control_unit_loglik(0.7, 0.2, p) == pytest.approx(stats.norm.logpdf(0.7, p.mu0(0.2), p.sigma0), abs=1e-12)


def test_total_probability_at_fixed_x(truth):
    x = 0.4
    f1 = lambda y1: np.exp(treated_unit_loglik(y1, x, truth))
    f0 = lambda y0: np.exp(control_unit_loglik(y0, x, truth))
    total = integrate.quad(f1, -30, 30, limit=200)[0] + integrate.quad(f0, -30, 30, limit=200)[0]
    assert total == pytest.approx(1.0, abs=1e-4)


def test_empty_dataset_is_prior_only(truth):
    empty = Dataset.from_units([], d=1)
    assert marginal_log_posterior(truth, empty) == log_prior(truth, PriorSpec())


def test_control_arm_only_ignores_beta(truth):
    units = [UnitRecord(str(i), (x,), 0, None, None, y) for i, (x, y) in enumerate([(0.1, 1.0), (-1.0, 0.2), (2.0, 2.5)])]
    data = Dataset.from_units(units)
    flat = PriorSpec(overrides={b: ("normal", 0.0, 1e12) for b in ("beta0", "beta1", "beta2")})
    a = marginal_log_posterior(truth, data, flat)
    b = marginal_log_posterior(truth.replace(beta0=3.0, beta1=-2.0, beta2=1.5), data, flat)
    assert a == pytest.approx(b, abs=1e-9)


def test_three_unit_hand_composition(truth):
    units = [
        UnitRecord("t", (0.5,), 1, 1, 2.0, None),
        UnitRecord("u", (-0.3,), 1, 0, None, 0.4),
        UnitRecord("c", (1.2,), 0, None, None, 1.9),
    ]
    data = Dataset.from_units(units)
    expected = (
        treated_unit_loglik(2.0, 0.5, truth)
        + control_unit_loglik(0.4, -0.3, truth)
        + stats.norm.logpdf(1.9, truth.mu0(1.2), truth.sigma0)
        + log_prior(truth, PriorSpec())
    )
    assert marginal_log_posterior(truth, data) == pytest.approx(expected, abs=1e-10)


def test_augmented_integrates_to_marginal(truth):
    data = Dataset.from_units([UnitRecord("t", (0.5,), 1, 1, 2.0, None)])
    prior = PriorSpec()
    lp = log_prior(truth, prior)
    f = lambda y0: np.exp(augmented_log_posterior(truth, [y0], data, prior) - lp)
    integral = integrate.quad(f, -20, 20, limit=200, epsabs=1e-14)[0]
    assert np.log(integral) == pytest.approx(treated_unit_loglik(2.0, 0.5, truth), abs=1e-6)


def test_augmented_untreated_terms_do_not_see_latents(truth):
    units = [UnitRecord("t", (0.5,), 1, 1, 2.0, None), UnitRecord("u", (0.1,), 1, 0, None, 0.3)]
    lik = GaussianLikelihood(Dataset.from_units(units))
    p = truth.to_array()
    a = lik.augmented_log_likelihood(p, [0.0]) - lik.augmented_treated_terms(p, np.array([0.0]))[0]
    b = lik.augmented_log_likelihood(p, [2.0]) - lik.augmented_treated_terms(p, np.array([2.0]))[0]
    assert a == pytest.approx(b, abs=1e-12)


def test_augmented_equals_marginal_for_control_unit(truth):
    data = Dataset.from_units([UnitRecord("c", (0.3,), 0, None, None, 1.1)])
    assert augmented_log_posterior(truth, [], data) == marginal_log_posterior(truth, data)


def test_augmented_length_mismatch(truth, small_study):
    with pytest.raises(ShapeError):
        augmented_log_posterior(truth, [0.0], small_study)


def test_full_conditional_contract(truth):
    with pytest.raises(ContractError):
        y0mis_full_conditional_logdensity(0.0, UnitRecord("u", (0.1,), 1, 0, None, 0.3), truth)


def test_full_conditional_reduces_to_base_density(truth):
    p = truth.replace(beta2=0.0, theta12=0.0, theta13=0.0)
    unit = UnitRecord("t", (0.5,), 1, 1, 2.0, None)
    grid = np.linspace(-2, 4, 13)
    diff = y0mis_full_conditional_logdensity(grid, unit, p) - normal_logpdf(grid, p.mu0(0.5), p.sigma0)
    assert np.ptp(diff) < 1e-12


def test_full_conditional_gaussian_times_tilt(truth):
    p = truth.replace(theta13=0.0)
    x, y1 = 0.5, 2.0
    unit = UnitRecord("t", (x,), 1, 1, y1, None)
    prec = 1 / p.sigma0**2 + p.theta12**2 / p.sigma1**2
    mean = (p.mu0(x) / p.sigma0**2 + p.theta12 * (y1 - p.theta10 - p.theta11 * x) / p.sigma1**2) / prec
    grid = np.linspace(-6, 8, 20001)
    ref = stats.norm.pdf(grid, mean, prec**-0.5) * logistic(p.propensity_index(grid, x))
    num = np.exp(y0mis_full_conditional_logdensity(grid, unit, p))
    tv = 0.5 * np.abs(ref / ref.sum() - num / num.sum()).sum()
    assert tv < 1e-4


def test_full_conditional_mode_moves_right_with_beta2(truth):
    unit = UnitRecord("t", (0.5,), 1, 1, 2.0, None)
    grid = np.linspace(-3, 5, 8001)
    lo = grid[np.argmax(y0mis_full_conditional_logdensity(grid, unit, truth.replace(beta2=0.0)))]
    hi = grid[np.argmax(y0mis_full_conditional_logdensity(grid, unit, truth.replace(beta2=2.0)))]
    assert hi > lo


def test_augmented_maximum_is_interior(truth):
    data = Dataset.from_units([UnitRecord("t", (0.5,), 1, 1, 2.0, None)])
    grid = np.linspace(-10, 10, 2001)
    vals = [augmented_log_posterior(truth, [g], data) for g in grid]
    k = int(np.argmax(vals))
    assert 0 < k < grid.size - 1


def test_floor_diagnostic(truth):
    data = Dataset.from_units([UnitRecord("c", (0.0,), 0, None, None, 1e3)])
    diag = {}
    marginal_log_posterior(truth, data, diagnostics=diag)
    assert diag["units_at_floor"] == 1


def test_vectorized_matches_unit_functions(truth, small_study):
    lik = GaussianLikelihood(small_study)
    terms = lik.unit_logliks(truth.to_array())
    for i, u in enumerate(small_study.units[:40]):
        if u.r == 0:
            ref = stats.norm.logpdf(u.y0, truth.mu0(u.x[0]), truth.sigma0)
        elif u.z == 1:
            ref = treated_unit_loglik(u.y1, u.x, truth)
        else:
            ref = control_unit_loglik(u.y0, u.x, truth)
        assert terms[i] == pytest.approx(ref, abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(truth, small_study, seed):
    order = np.random.default_rng(seed).permutation(small_study.n)
    a = marginal_log_posterior(truth, small_study)
    b = marginal_log_posterior(truth, small_study.permuted(order))
    assert a == pytest.approx(b, rel=1e-12)


def test_prior_families():
    prior = PriorSpec(overrides={"beta2": ("fixed", 0.6)})
    assert prior.log_density(["beta2"], [0.6]) == 0.0
    assert prior.log_density(["beta2"], [0.7]) == -np.inf
    assert PriorSpec().log_density(["sigma0"], [-1.0]) == -np.inf
    assert np.isfinite(PriorSpec().log_density(["sigma0", "theta10"], [0.5, 3.0]))
