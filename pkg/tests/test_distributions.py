"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import math

import numpy as np
import pytest
from scipy import stats

from distributions import (
    Family,
    FitMethod,
    FittedDistribution,
    cdf,
    density_curve,
    expected_rr,
    exposure_model,
    fit_mixture,
    fit_mle,
    fit_moments,
    log_likelihood,
    mean,
    parent_mean,
    parent_var,
    pdf,
    sample,
    split_zeros,
    truncated_mean,
)
from errors import (
    DegenerateSample,
    DimensionMismatch,
    InfeasibleMoments,
    InvalidSpecification,
    NonPositiveData,
)
from numerics import integrate_gk
from rr_models import Counterfactual, RelativeRiskModel

SSB_MEAN, SSB_SD = 1.48, 1.38


@pytest.mark.parametrize(
    "family, expected",
    [
        (Family.GAMMA, (1.15, 1.29)),
        (Family.LOGNORMAL, (0.08, 0.79)),
        (Family.NORMAL, (1.48, 1.38)),
    ],
)
def test_fit_moments_reference(family, expected):
    """
    Test moment fits for mean 1.48 and standard deviation 1.38.
    """
    dist = fit_moments(family, SSB_MEAN, SSB_SD**2)
    assert dist.fit_method is FitMethod.MOM
    np.testing.assert_allclose(dist.params, expected, atol=0.005)


@pytest.mark.parametrize("family", list(Family))
@pytest.mark.parametrize("mean_value, sd", [(1.48, 1.38), (2.0, 0.5), (0.7, 1.9)])
def test_fit_moments_reproduces_moments(family, mean_value, sd):
    """
    Test that the fitted parent reproduces the requested moments.
    """
    dist = fit_moments(family, mean_value, sd**2)
    assert parent_mean(dist) == pytest.approx(mean_value, rel=1e-8)
    assert parent_var(dist) == pytest.approx(sd**2, rel=1e-8)


@pytest.mark.parametrize(
    "family, mean_value, var",
    [
        (Family.GAMMA, -1.0, 1.0),
        (Family.WEIBULL, 0.0, 1.0),
        (Family.LOGNORMAL, 1.0, 0.0),
        (Family.NORMAL, 1.0, -1.0),
        (Family.GAMMA, math.nan, 1.0),
    ],
)
def test_fit_moments_infeasible(family, mean_value, var):
    """
    Test that infeasible moments are rejected.
    """
    with pytest.raises(InfeasibleMoments):
        fit_moments(family, mean_value, var)


def test_fit_mle_normal_closed_form():
    """
    Test the Normal MLE with 1/n variance.
    """
    dist = fit_mle(Family.NORMAL, [1.0, 2.0, 3.0])
    assert dist.params[0] == pytest.approx(2.0)
    assert dist.params[1] ** 2 == pytest.approx(2.0 / 3.0)


def test_fit_mle_lognormal_closed_form():
    """
    Test the Lognormal MLE on log-data.
    """
    data = np.exp([0.0, 1.0, 2.0])
    dist = fit_mle(Family.LOGNORMAL, data)
    np.testing.assert_allclose(dist.params, [1.0, math.sqrt(2.0 / 3.0)], rtol=1e-12)


@pytest.mark.parametrize("line_search", ["wolfe", "exact"])
def test_fit_mle_gamma_recovers_parameters(line_search):
    """
    Test Gamma MLE against the generating parameters and scipy's fit.
    """
    data = stats.gamma.rvs(1.41, scale=0.90, size=10000, random_state=11)
    dist = fit_mle(Family.GAMMA, data, line_search=line_search)
    assert dist.fit_method is FitMethod.MLE
    np.testing.assert_allclose(dist.params, [1.41, 0.90], rtol=0.05)

    shape, _, scale = stats.gamma.fit(data, floc=0)
    np.testing.assert_allclose(dist.params, [shape, scale], rtol=1e-4)


def test_fit_mle_weibull_recovers_parameters():
    """
    Test Weibull MLE against the generating parameters.
    """
    data = stats.weibull_min.rvs(1.20, scale=1.66, size=10000, random_state=12)
    dist = fit_mle(Family.WEIBULL, data)
    np.testing.assert_allclose(dist.params, [1.20, 1.66], rtol=0.05)


@pytest.mark.parametrize("family", [Family.GAMMA, Family.WEIBULL])
def test_fit_mle_beats_moments(family):
    """
    Test that the MLE log-likelihood is at least the moment fit's.
    """
    data = stats.weibull_min.rvs(0.9, scale=2.0, size=2000, random_state=5)
    mle = fit_mle(family, data)
    mom = fit_moments(family, float(np.mean(data)), float(np.var(data)))
    assert log_likelihood(mle, data) >= log_likelihood(mom, data) - 1e-9


@pytest.mark.parametrize(
    "family, data, error",
    [
        (Family.LOGNORMAL, [math.e, math.e], DegenerateSample),
        (Family.GAMMA, [0.0, 1.0, 2.0], NonPositiveData),
        (Family.WEIBULL, [-1.0, 1.0, 2.0], NonPositiveData),
        (Family.NORMAL, [1.0], DegenerateSample),
    ],
)
def test_fit_mle_invalid_data(family, data, error):
    """
    Test rejection of degenerate or non-positive samples.
    """
    with pytest.raises(error):
        fit_mle(family, data)


def test_split_zeros_and_fit_mixture():
    """
    Test that zeros become the point mass and positives are fitted.
    """
    rng = np.random.default_rng(3)
    positives = stats.gamma.rvs(2.0, scale=1.0, size=900, random_state=rng)
    data = np.concatenate([np.zeros(100), positives])

    p0, kept = split_zeros(data)
    assert p0 == pytest.approx(0.1)
    assert kept.size == 900

    dist = fit_mixture(Family.GAMMA, data, upper=12.0)
    assert dist.zero_mass == pytest.approx(0.1)
    assert dist.upper == 12.0
    assert dist.lower == 0.0
    with pytest.raises(NonPositiveData):
        split_zeros([-1.0, 0.0, 2.0])


def test_pdf_reference_values():
    """
    Test densities at reference points.
    """
    standard = FittedDistribution(Family.NORMAL, (0.0, 1.0))
    assert pdf(standard, 0.0) == pytest.approx(0.39894, abs=1e-5)

    exponential = FittedDistribution(Family.GAMMA, (1.0, 2.0))
    assert pdf(exponential, 2.0) == pytest.approx(math.exp(-1.0) / 2.0, rel=1e-12)

    inflated = exponential.with_zero_mass(0.25)
    assert pdf(inflated, 2.0) == pytest.approx(0.75 * math.exp(-1.0) / 2.0, rel=1e-12)


@pytest.mark.parametrize(
    "dist",
    [
        FittedDistribution(Family.GAMMA, (1.15, 1.29), lower=0.5, upper=4.0),
        FittedDistribution(Family.NORMAL, (1.48, 1.38), lower=0.0, upper=12.0),
        FittedDistribution(Family.LOGNORMAL, (0.05, 0.98), upper=12.0),
        FittedDistribution(Family.WEIBULL, (1.20, 1.66), upper=12.0),
    ],
)
def test_truncated_density_integrates_to_one(dist):
    """
    Test renormalized densities and CDF boundary values.
    """
    lo, hi = dist.window
    assert integrate_gk(lambda x: pdf(dist, x), lo, hi).value == pytest.approx(1.0, abs=1e-8)
    assert cdf(dist, lo) == pytest.approx(0.0, abs=1e-12)
    assert cdf(dist, hi) == pytest.approx(1.0, abs=1e-12)
    assert pdf(dist, hi + 1.0) == 0.0


def test_unnormalized_truncation_keeps_parent_density():
    """
    Test that the unnormalized convention does not rescale the density.
    """
    dist = FittedDistribution(Family.NORMAL, (1.48, 1.38), lower=0.0, renormalize=False)
    assert pdf(dist, 1.0) == pytest.approx(stats.norm.pdf(1.0, 1.48, 1.38), rel=1e-12)
    assert pdf(dist, -0.5) == 0.0


def test_exposure_model_truncates_normal_at_zero():
    """
    Test the exposure convention for unbounded Normal fits.
    """
    normal = exposure_model(FittedDistribution(Family.NORMAL, (1.48, 1.38)))
    assert normal.lower == 0.0
    assert normal.window == (0.0, math.inf)
    gamma = exposure_model(FittedDistribution(Family.GAMMA, (1.15, 1.29)))
    assert not gamma.is_truncated


@pytest.mark.parametrize(
    "params, message",
    [((1.0,), "two finite"), ((1.0, -1.0), "positive"), ((-1.0, 1.0), "positive")],
)
def test_distribution_validation(params, message):
    """
    Test parameter validation.
    """
    with pytest.raises(InvalidSpecification, match=message):
        FittedDistribution(Family.GAMMA, params)
    with pytest.raises(InvalidSpecification):
        FittedDistribution(Family.GAMMA, (1.0, 1.0), lower=2.0, upper=1.0)
    with pytest.raises(InvalidSpecification):
        FittedDistribution(Family.GAMMA, (1.0, 1.0), zero_mass=1.5)


def test_sample_point_mass_only(rng):
    """
    Test that p0 = 1 yields only zeros.
    """
    dist = FittedDistribution(Family.WEIBULL, (1.2, 1.66), zero_mass=1.0)
    np.testing.assert_array_equal(sample(dist, 50, rng), np.zeros(50))


def test_sample_is_deterministic_per_seed():
    """
    Test that the same seed reproduces the same draws.
    """
    dist = FittedDistribution(Family.LOGNORMAL, (0.05, 0.98), upper=12.0, zero_mass=0.05)
    first = sample(dist, 500, np.random.default_rng(42))
    second = sample(dist, 500, np.random.default_rng(42))
    np.testing.assert_array_equal(first, second)
    assert np.all((first >= 0.0) & (first <= 12.0))


def test_sample_truncated_normal_mean():
    """
    Test the sample mean of a truncated Normal against its exact mean.
    """
    dist = FittedDistribution(Family.NORMAL, (1.48, 1.38), lower=0.0, upper=12.0)
    draws = sample(dist, 1_000_000, np.random.default_rng(8))
    standard_error = float(np.std(draws)) / math.sqrt(draws.size)
    assert abs(float(np.mean(draws)) - truncated_mean(dist)) < 3.0 * standard_error


def test_zero_inflated_sample_mean():
    """
    Test the sample mean of zero-inflated draws against the mixture mean.
    """
    dist = FittedDistribution(Family.WEIBULL, (1.20, 1.66), upper=12.0, zero_mass=0.05)
    assert mean(dist) == pytest.approx(0.95 * truncated_mean(dist))
    draws = sample(dist, 1_000_000, np.random.default_rng(11))
    standard_error = float(np.std(draws)) / math.sqrt(draws.size)
    assert abs(float(np.mean(draws)) - mean(dist)) < 3.0 * standard_error


@pytest.mark.parametrize(
    "dist",
    [
        FittedDistribution(Family.GAMMA, (1.15, 1.29), upper=12.0),
        FittedDistribution(Family.LOGNORMAL, (0.05, 0.98), upper=12.0),
        FittedDistribution(Family.NORMAL, (1.48, 1.38), lower=0.0, upper=12.0),
        FittedDistribution(Family.WEIBULL, (1.20, 1.66), upper=12.0),
    ],
)
def test_sample_matches_cdf(dist):
    """
    Test inverse-CDF draws with a Kolmogorov-Smirnov statistic.
    """
    n = 100_000
    draws = sample(dist, n, np.random.default_rng(2025))
    statistic = stats.kstest(draws, lambda x: cdf(dist, x)).statistic
    assert statistic < 1.63 / math.sqrt(n)


def test_density_curve_frame():
    """
    Test the plotting frame.
    """
    dist = FittedDistribution(Family.GAMMA, (1.15, 1.29))
    frame = density_curve(dist, np.linspace(0.1, 5.0, 11))
    assert list(frame.columns) == ["x", "density"]
    assert len(frame) == 11
    assert (frame["density"] > 0).all()


def test_log_likelihood_with_point_mass():
    """
    Test the zero-inflated log-likelihood.
    """
    dist = FittedDistribution(Family.GAMMA, (1.0, 1.0), zero_mass=0.5)
    expected = math.log(0.5) + math.log(0.5) + (-1.0)
    assert log_likelihood(dist, [0.0, 1.0]) == pytest.approx(expected, rel=1e-12)


def test_expected_rr_gamma_closed_form(ssb_model):
    """
    Test E[RR] for Gamma(1.15, 1.29) and its agreement with quadrature.
    """
    dist = FittedDistribution(Family.GAMMA, (1.15, 1.29))
    closed = expected_rr(dist, ssb_model)
    beta = ssb_model.beta[0]
    assert not closed.divergent
    assert closed.value == pytest.approx((1.0 - beta * 1.29) ** (-1.15), rel=1e-12)
    assert 1.0 - 1.0 / closed.value == pytest.approx(0.3455, abs=1e-4)

    quadrature = expected_rr(dist, ssb_model, force_quadrature=True)
    assert quadrature.value == pytest.approx(closed.value, rel=1e-7)


def test_expected_rr_normal_closed_form(ssb_model):
    """
    Test the untruncated Normal moment generating function.
    """
    dist = FittedDistribution(Family.NORMAL, (1.48, 1.38))
    beta = ssb_model.beta[0]
    closed = expected_rr(dist, ssb_model)
    assert closed.value == pytest.approx(math.exp(beta * 1.48 + 0.5 * (beta * 1.38) ** 2))
    quadrature = expected_rr(dist, ssb_model, force_quadrature=True)
    assert quadrature.value == pytest.approx(closed.value, rel=1e-7)


@pytest.mark.parametrize(
    "dist",
    [
        FittedDistribution(Family.LOGNORMAL, (0.05, 0.98)),
        FittedDistribution(Family.LOGNORMAL, (-2.0, 0.1)),
        FittedDistribution(Family.WEIBULL, (0.8, 1.5)),
        FittedDistribution(Family.GAMMA, (2.0, 5.0)),
    ],
)
def test_expected_rr_divergence(ssb_model, dist):
    """
    Test that heavy tails and large Gamma scales are flagged as divergent.
    """
    result = expected_rr(dist, ssb_model)
    assert result.divergent
    assert math.isinf(result.value)


def test_expected_rr_truncation_makes_lognormal_finite(ssb_model):
    """
    Test that an upper bound yields a finite lognormal expectation.
    """
    dist = FittedDistribution(Family.LOGNORMAL, (0.05, 0.98), upper=12.0)
    result = expected_rr(dist, ssb_model)
    assert not result.divergent
    assert 1.0 < result.value < math.exp(ssb_model.beta[0] * 12.0)


def test_expected_rr_special_cases(ssb_model):
    """
    Test beta = 0, the pure point mass and the zero counterfactual.
    """
    dist = FittedDistribution(Family.LOGNORMAL, (0.05, 0.98))
    flat = RelativeRiskModel.from_beta(0.0, se=0.1)
    assert expected_rr(dist, flat).value == 1.0
    assert expected_rr(dist.with_zero_mass(1.0), ssb_model).value == 1.0
    assert expected_rr(dist, ssb_model, Counterfactual.zero()).value == 1.0


def test_expected_rr_requires_scalar_model():
    """
    Test that parametric expectations need a scalar exposure.
    """
    model = RelativeRiskModel.from_beta([0.1, 0.2], se=[0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        expected_rr(FittedDistribution(Family.GAMMA, (1.0, 1.0)), model)


def test_lower_bound_at_natural_support():
    """
    Test that a zero lower bound truncates a Normal but not a positive family.
    """
    lognormal = FittedDistribution(Family.LOGNORMAL, (0.05, 0.98), lower=0.0)
    assert not lognormal.is_truncated
    assert FittedDistribution(Family.NORMAL, (1.48, 1.38), lower=0.0).is_truncated
    model = RelativeRiskModel.from_beta(math.log(1.27), se=0.0443)
    assert expected_rr(lognormal, model).divergent
    shifted = FittedDistribution(Family.LOGNORMAL, (0.05, 0.98), lower=1.0)
    assert expected_rr(shifted, model).divergent


def test_fit_mixture_normal_is_bounded_below():
    """
    Test that the fitted Normal positive part carries no negative exposure.
    """
    rng = np.random.default_rng(4)
    positives = np.abs(rng.normal(1.5, 1.4, size=800)) + 1e-3
    dist = fit_mixture(Family.NORMAL, np.concatenate([np.zeros(40), positives]))
    assert dist.window[0] == 0.0
    assert cdf(dist, -0.5) == 0.0
    assert cdf(dist, 0.0) == pytest.approx(dist.zero_mass)
    assert dist.zero_mass == pytest.approx(40 / 840)
