import math

import numpy as np
import pytest
from scipy import integrate, stats

from nonignorable_hte.censored import (
    CensoredDataError,
    CensoredLikelihood,
    TobitGumbelParams,
    TruncationError,
    censored_atom,
    censored_hte_curve,
    censored_mean,
    censored_moment_vector,
    censored_unit_loglik,
    gumbel_moments,
    latent_moments,
    truncated_gumbel_draw,
)
from nonignorable_hte.core import gumbel_cdf, gumbel_logcdf, gumbel_logpdf, logistic
from nonignorable_hte.gmm import AuxiliaryMoments
from nonignorable_hte.model import Dataset, ShapeError, UnitRecord
from nonignorable_hte.simulate import SimulationConfig, simulate

from conftest import frozen_draws

DESIGN = TobitGumbelParams.synthetic_design()


def test_params_round_trip():
    v = DESIGN.to_array()
    assert v.size == 3 * DESIGN.d + 8
    assert TobitGumbelParams.from_array(v, DESIGN.d).to_array().tolist() == v.tolist()
    assert DESIGN.names()[DESIGN.names().index("lambda1")] == "lambda1"
    with pytest.raises(ShapeError):
        TobitGumbelParams.from_array(v[:-1], DESIGN.d)


def test_censored_mean_standard_normal():
    assert censored_mean(0.0, 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    assert censored_mean(0.0, 1.0) == pytest.approx(0.398942, abs=1e-6)
    assert censored_mean(50.0, 1.0) == pytest.approx(50.0, abs=1e-12)


def test_gumbel_moments_by_monte_carlo():
    rng = np.random.default_rng(0)
    y = 0.4 - 1.3 * np.log(-np.log(rng.random(1_000_000)))
    m1, m2 = gumbel_moments(0.4, 1.3)
    assert m1 == pytest.approx(y.mean(), abs=0.01)
    assert m2 == pytest.approx((y * y).mean(), abs=0.03)


def test_branch_iv_factorizes_without_y0_tilt():
    p = TobitGumbelParams(0.5, (0.5,), 1.0, 0.3, 0.8, (0.2,), 0.3, -0.4, 0.0, 0.0, (0.3,))
    x = 0.7
    unit = UnitRecord("c", (x,), 1, 0, None, 0.0)
    expected = float(gumbel_logcdf(0.0, p.mu0(np.array([x])), p.sigma0)) + math.log(1 - logistic(-0.4 + 0.3 * x))
    assert censored_unit_loglik(unit, p) == pytest.approx(expected, abs=1e-10)


def test_branch_iii_is_sum_of_addends():
    x, y0 = 0.7, 1.3
    unit = UnitRecord("c", (x,), 1, 0, None, y0)
    index = DESIGN.propensity_index(y0, np.array([x]))
    expected = gumbel_logpdf(y0, DESIGN.mu0(np.array([x])), DESIGN.sigma0) + math.log(1 - logistic(float(index)))
    assert censored_unit_loglik(unit, DESIGN) == pytest.approx(float(expected), abs=1e-12)


def test_control_arm_branches():
    x = (0.7,)
    pos = censored_unit_loglik(UnitRecord("a", x, 0, None, None, 1.3), DESIGN)
    assert pos == pytest.approx(float(gumbel_logpdf(1.3, DESIGN.mu0(np.array(x)), DESIGN.sigma0)), abs=1e-12)
    zero = censored_unit_loglik(UnitRecord("a", x, 0, None, None, 0.0), DESIGN)
    assert zero == pytest.approx(float(gumbel_logcdf(0.0, DESIGN.mu0(np.array(x)), DESIGN.sigma0)), abs=1e-12)


def _mc_latents(x, n, seed):
    rng = np.random.default_rng(seed)
    y0 = DESIGN.mu0(np.array([x])) - DESIGN.sigma0 * np.log(-np.log(rng.random(n)))
    g = logistic(DESIGN.propensity_index(y0, np.array([[x]] * n)))
    mu1 = DESIGN.lambda0 + DESIGN.lambda1 * y0 + DESIGN.lambda_x[0] * x
    return y0, g, mu1


def test_branch_i_matches_monte_carlo():
    x, y1 = 0.7, 1.1
    y0, g, mu1 = _mc_latents(x, 1_000_000, 1)
    mc = np.mean(stats.norm.pdf(y1, mu1, DESIGN.sigma1) * g)
    assert censored_unit_loglik(UnitRecord("t", (x,), 1, 1, y1, None), DESIGN) == pytest.approx(math.log(mc), abs=1e-3 * 5)


def test_branch_ii_matches_monte_carlo():
    x = 0.7
    y0, g, mu1 = _mc_latents(x, 1_000_000, 2)
    mc = np.mean(stats.norm.cdf(-mu1 / DESIGN.sigma1) * g)
    value = math.exp(censored_unit_loglik(UnitRecord("t", (x,), 1, 1, 0.0, None), DESIGN))
    assert value == pytest.approx(mc, rel=0.01)


def test_four_branches_total_probability():
    x = (0.7,)
    f = lambda u: math.exp(censored_unit_loglik(u, DESIGN))
    t1 = integrate.quad(lambda y: f(UnitRecord("a", x, 1, 1, y, None)), 0, np.inf, limit=200)[0]
    t2 = f(UnitRecord("a", x, 1, 1, 0.0, None))
    t3 = integrate.quad(lambda y: f(UnitRecord("a", x, 1, 0, None, y)), 0, np.inf, limit=200)[0]
    t4 = f(UnitRecord("a", x, 1, 0, None, 0.0))
    assert t1 + t2 + t3 + t4 == pytest.approx(1.0, abs=1e-3)


def test_negative_outcome_rejected():
    with pytest.raises(CensoredDataError):
        censored_unit_loglik(UnitRecord("a", (0.0,), 0, None, None, -0.5), DESIGN)


def test_vectorized_matches_unit_function():
    data = simulate(SimulationConfig(120, DESIGN, x_sd=1.0, seed=2))
    terms = CensoredLikelihood(data).unit_logliks(DESIGN.to_array())
    for i, u in enumerate(data.units):
        assert terms[i] == pytest.approx(censored_unit_loglik(u, DESIGN), abs=1e-10)


def test_moment_vector_zero_at_reference():
    y0, x = 0.4, np.array([0.2])
    p0 = 1 - logistic(float(DESIGN.propensity_index(y0, x[None, :])[0]))
    aux = AuxiliaryMoments(0.0, x, p0)
    m = censored_moment_vector(y0, x, DESIGN, aux, mean_y0_star=y0, mean_y0_star_sq=y0 * y0)
    assert m.shape == (4,)
    assert np.allclose(m, 0.0, atol=1e-12)


def test_moment_vector_dimension_six():
    p = TobitGumbelParams(0.1, (0.1,) * 6, 1.0, 0.2, 0.5, (0.0,) * 6, 0.5, 0.0, 0.2, -0.1, (0.05,) * 6)
    aux = AuxiliaryMoments(0.0, np.zeros(6), 0.5)
    assert censored_moment_vector(0.3, np.ones(6), p, aux, control_x=np.zeros((3, 6))).shape == (9,)


def test_moment_vector_hand_fixture():
    # index beta0 + beta1 y + beta2 y^2 + beta_x x = 0 at y = 1, x = 1: propensity 0.5
    p = TobitGumbelParams(0.0, (0.0,), 1.0, 0.0, 1.0, (0.0,), 1.0, -0.2, 0.5, -0.1, (-0.2,))
    aux = AuxiliaryMoments(0.0, [0.5], 0.4)
    m = censored_moment_vector(1.0, [1.0], p, aux, mean_y0_star=0.25, mean_y0_star_sq=2.0)
    assert m == pytest.approx([2 - 2.5, 0.5 * 2, 0.75 * 2, -1.0 * 2], abs=1e-12)


def test_latent_moments_average_over_covariates():
    x = np.array([[0.0], [1.0]])
    m1, m2 = latent_moments(DESIGN.to_array(), x, 1)
    a = gumbel_moments(DESIGN.xi0, DESIGN.sigma0)
    b = gumbel_moments(DESIGN.xi0 + DESIGN.xi_x[0], DESIGN.sigma0)
    assert m1 == pytest.approx((a[0] + b[0]) / 2) and m2 == pytest.approx((a[1] + b[1]) / 2)


def test_truncated_gumbel_untruncated_mean():
    rng = np.random.default_rng(0)
    draws = truncated_gumbel_draw(np.full(1_000_000, 0.3), 2.0, np.inf, rng)
    assert draws.mean() == pytest.approx(0.3 + 0.5772 * 2.0, abs=0.01)


def test_truncated_gumbel_matches_truncated_cdf():
    rng = np.random.default_rng(1)
    loc, scale, upper = 0.5, 1.0, 0.0
    draws = truncated_gumbel_draw(np.full(100_000, loc), scale, upper, rng)
    assert np.all(draws <= upper)
    cdf = lambda y: gumbel_cdf(np.minimum(y, upper), loc, scale) / gumbel_cdf(upper, loc, scale)
    assert stats.kstest(draws, cdf).statistic < 0.01


def test_truncated_gumbel_underflow_names_unit():
    with pytest.raises(TruncationError, match="unit 17"):
        truncated_gumbel_draw(1000.0, 1.0, 0.0, np.random.default_rng(0), unit=17)


def test_hte_curve_without_censoring():
    p = TobitGumbelParams(3.0, (0.2,), 0.5, 20.0, 0.7, (0.0,), 1e-6, 0.0, 0.1, 0.0, (0.0,))
    data = simulate(SimulationConfig(300, p, x_sd=1.0, seed=3))
    grid = np.linspace(2.0, 5.0, 7)
    res = censored_hte_curve(frozen_draws(p.to_array(), names=p.names()), data, grid)
    assert np.allclose(res.curve.mean, 20.0 + 0.7 * grid - grid, atol=1e-9)


def test_atom_matches_truncated_sampling():
    data = simulate(SimulationConfig(500, DESIGN, x_sd=1.0, seed=4))
    atom = censored_atom(DESIGN.to_array(), data.x, 1)
    # rejection sampling of y0* <= 0 over the same covariate rows
    rng = np.random.default_rng(5)
    x = np.repeat(data.x[:, 0], 4000)
    y0 = DESIGN.xi0 + DESIGN.xi_x[0] * x - DESIGN.sigma0 * np.log(-np.log(rng.random(x.size)))
    keep = y0 <= 0
    y1 = DESIGN.lambda0 + DESIGN.lambda1 * y0[keep] + DESIGN.lambda_x[0] * x[keep] + DESIGN.sigma1 * rng.standard_normal(keep.sum())
    assert atom == pytest.approx(np.maximum(y1, 0).mean(), abs=0.02)


def test_curve_is_continuous_and_atom_separate():
    data = simulate(SimulationConfig(400, DESIGN, x_sd=1.0, seed=6))
    res = censored_hte_curve(frozen_draws(DESIGN.to_array(), names=DESIGN.names()), data)
    g, m = res.curve.grid, res.curve.mean
    # |d/dy0 HTE| <= |lambda1| + 1 + (covariate reweighting drift); bound generously by 5 per unit y0
    assert np.all(np.abs(np.diff(m)) <= 5 * np.diff(g))
    assert res.atom.ci95[0] <= res.atom.ci95[1]
    with pytest.raises(ValueError):
        censored_hte_curve(frozen_draws(DESIGN.to_array(), names=DESIGN.names()), data, [0.0, 1.0])
