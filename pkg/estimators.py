"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from distributions import (
    FittedDistribution,
    exposure_model,
    expected_rr,
    fit_moments,
)
from errors import (
    DegenerateSample,
    DimensionMismatch,
    InvalidPmf,
    InvalidSpecification,
    NonDifferentiableAtPoint,
    NonDifferentiableCounterfactual,
    NonPositiveRisk,
    UnsupportedMode,
)
from logutils import get_logger
from numerics import gradient_fd, wald_z
from rr_models import (
    Counterfactual,
    RelativeRiskModel,
    RiskForm,
    cft_apply,
    cft_derivs,
    rr_batch,
    rr_grad_beta_batch,
    rr_hess_x,
    rr_value,
)
from schemas import Diagnostics, EstimateResult, Method, Quantity

logger = get_logger(__name__)

DEFAULT_LEVEL = 0.95
PMF_TOL = 1e-12


class ApproxMode(str, Enum):
    """Second-order expansion variants of the approximate method."""

    TAYLOR_VARIANCE = "taylor"
    PAPER_SD = "paper-sd"


@dataclass(frozen=True, eq=False)
class ExposureSample:
    """Individual exposures as an n x k matrix with optional survey weights."""

    values: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise DimensionMismatch(f"Exposure matrix must be 2-D, got shape {values.shape}.")
        if values.shape[0] < 2:
            raise DegenerateSample(
                f"An exposure sample needs n >= 2 rows, got {values.shape[0]}."
            )
        if not np.all(np.isfinite(values)):
            raise InvalidSpecification("Exposure values must be finite.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

        if self.weights is not None:
            weights = np.array(self.weights, dtype=float).reshape(-1)
            if weights.size != values.shape[0]:
                raise DimensionMismatch(
                    f"{weights.size} weights for {values.shape[0]} observations."
                )
            if not (np.all(np.isfinite(weights)) and np.all(weights > 0)):
                raise InvalidSpecification("Survey weights must be finite and positive.")
            weights.setflags(write=False)
            object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @property
    def has_uniform_weights(self) -> bool:
        return self.weights is None or bool(np.all(self.weights == self.weights[0]))

    @property
    def effective_n(self) -> float:
        """Sample size used by variance formulas; weights count as frequencies."""
        return float(self.n) if self.weights is None else float(np.sum(self.weights))

    @property
    def probabilities(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights / np.sum(self.weights)

    def summary(self) -> "SummaryStats":
        """Weighted mean and 1/n covariance."""
        probs = self.probabilities
        center = weighted_mean(self.values, probs)
        deviations = self.values - center
        cov = weighted_mean(deviations[:, :, None] * deviations[:, None, :], probs)
        return SummaryStats(center, 0.5 * (cov + cov.T), int(round(self.effective_n)))


@dataclass(frozen=True, eq=False)
class SummaryStats:
    """Exposure mean vector, covariance matrix and sample size."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        center = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (center.size, center.size):
            raise DimensionMismatch(
                f"Mean has {center.size} component(s) but covariance has shape {cov.shape}."
            )
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(cov))):
            raise InvalidSpecification("Summary statistics must be finite.")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise InvalidSpecification("Covariance matrix must be symmetric.")
        if np.any(np.diag(cov) < 0):
            raise InvalidSpecification("Variances must be non-negative.")
        if self.n < 2:
            raise DegenerateSample(f"Summary statistics need n >= 2, got {self.n}.")
        object.__setattr__(self, "mean", center)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def from_scalar(cls, mean: float, sd: float, n: int) -> "SummaryStats":
        if sd < 0:
            raise InvalidSpecification(f"Standard deviation must be >= 0, got {sd}.")
        return cls(np.array([mean]), np.array([[sd * sd]]), n)

    @property
    def k(self) -> int:
        return self.mean.size


def weighted_mean(values, probs: np.ndarray):
    """
    Order-independent weighted mean along the first axis.

    Terms are sorted before summation so that any permutation of the rows
    yields the same bits.
    """
    values = np.asarray(values, dtype=float)
    shape = (-1,) + (1,) * (values.ndim - 1)
    terms = values * probs.reshape(shape)
    return np.sort(terms, axis=0).sum(axis=0)


def _quantity(cft: Counterfactual) -> Quantity:
    return Quantity.PAF if cft.is_zero else Quantity.PIF


def _point(mu_obs: float, mu_cft: float, cft: Counterfactual) -> float:
    if mu_obs <= 0:
        raise NonPositiveRisk(f"Mean relative risk must be positive, got {mu_obs}.")
    if cft.is_zero:
        return 1.0 - 1.0 / mu_obs
    return 1.0 - mu_cft / mu_obs


def _wald(
    quantity: Quantity,
    point: float,
    variance: float,
    level: float,
    method: Method,
    diagnostics: Diagnostics,
    clamp_upper: bool,
) -> EstimateResult:
    if variance < 0:
        diagnostics.notes.append(f"negative variance {variance:.3g} clamped to 0")
        variance = 0.0
    se = math.sqrt(variance)
    half = wald_z(level) * se
    upper = point + half
    if clamp_upper and upper > 1.0:
        upper = 1.0
        diagnostics.notes.append("upper confidence bound clamped at 1")
    return EstimateResult(
        quantity=quantity,
        point=point,
        se=se,
        ci=(point - half, upper),
        level=level,
        method=method,
        diagnostics=diagnostics,
    )


def _pmf_arrays(pmf: Mapping, k: Optional[int] = None) -> tuple:
    if not pmf:
        raise InvalidPmf("Probability mass function is empty.")
    support = np.array([np.atleast_1d(value) for value in pmf.keys()], dtype=float)
    probs = np.array(list(pmf.values()), dtype=float)
    if np.any(~np.isfinite(probs)) or np.any(probs < 0):
        raise InvalidPmf("Probabilities must be finite and non-negative.")
    total = math.fsum(probs)
    if abs(total - 1.0) > PMF_TOL:
        raise InvalidPmf(f"Probabilities sum to {total!r}, not 1.")
    if k is not None and support.shape[1] != k:
        raise DimensionMismatch(
            f"pmf support has {support.shape[1]} component(s), model expects {k}."
        )
    return support, probs


def discrete_expected_rr(pmf: Mapping, model: RelativeRiskModel) -> float:
    """
    Sum of p(x) RR(x; beta) over a finite support.

    Args:
        pmf (Mapping): Exposure value (scalar or tuple) to probability.
        model (RelativeRiskModel): Relative risk model.

    Raises:
        InvalidPmf: If probabilities are negative or do not sum to one.
    """
    support, probs = _pmf_arrays(pmf, model.k)
    return float(weighted_mean(rr_batch(model, support), probs))


def discrete_pif(pmf_obs: Mapping, pmf_cft: Mapping, model: RelativeRiskModel) -> float:
    """
    Potential impact fraction between two discrete exposure distributions.

    Returns:
        float: (sum p_obs RR - sum p_cft RR) / sum p_obs RR.
    """
    observed = discrete_expected_rr(pmf_obs, model)
    counterfactual = discrete_expected_rr(pmf_cft, model)
    return (observed - counterfactual) / observed


def discrete_estimate(
    pmf_obs: Mapping, pmf_cft: Mapping, model: RelativeRiskModel
) -> EstimateResult:
    """Wraps :func:`discrete_pif` as an EstimateResult without interval."""
    observed = discrete_expected_rr(pmf_obs, model)
    counterfactual = discrete_expected_rr(pmf_cft, model)
    is_paf = all(np.all(np.atleast_1d(value) == 0) for value in pmf_cft)
    return EstimateResult(
        quantity=Quantity.PAF if is_paf else Quantity.PIF,
        point=(observed - counterfactual) / observed,
        method=Method.DISCRETE_ORACLE,
        diagnostics=Diagnostics(mu_obs=observed, mu_cft=counterfactual),
    )


def _check_dims(model: RelativeRiskModel, k: int) -> None:
    if model.k != k:
        raise DimensionMismatch(
            f"Exposure has {k} component(s) but the model has {model.k} coefficient(s)."
        )


def empirical_mu(
    sample: ExposureSample,
    model: RelativeRiskModel,
    cft: Optional[Counterfactual] = None,
) -> float:
    """Weighted sample mean of RR(g(X_i); beta), g = identity when absent."""
    _check_dims(model, sample.k)
    exposures = sample.values if cft is None else cft_apply(cft, sample.values)
    return float(weighted_mean(rr_batch(model, exposures), sample.probabilities))


def empirical_estimate(
    sample: ExposureSample,
    model: RelativeRiskModel,
    cft: Optional[Counterfactual] = None,
    level: float = DEFAULT_LEVEL,
    clamp_upper: bool = False,
) -> EstimateResult:
    """
    Empirical PAF/PIF with a delta-method confidence interval.

    The variance combines the sampling variability of the exposure mean
    (1/n moments) with the coefficient covariance plugged in directly.

    Args:
        sample (ExposureSample): Individual exposures.
        model (RelativeRiskModel): Relative risk with coefficient covariance.
        cft (Counterfactual, optional): Counterfactual; zero (PAF) if None.
        level (float): Confidence level.
        clamp_upper (bool): Clamp the upper bound at 1.

    Returns:
        EstimateResult: Point, standard error and Wald interval.
    """
    cft = cft or Counterfactual.zero()
    _check_dims(model, sample.k)
    probs = sample.probabilities
    n = sample.effective_n
    diagnostics = Diagnostics()

    if not sample.has_uniform_weights:
        logger.warning("Non-uniform survey weights treated as frequency weights.")
        diagnostics.notes.append("survey weights treated as frequency weights")
    if n < 2.0:
        logger.warning(
            "Survey weights sum to %s; the variance treats this as the sample size.", n
        )
        diagnostics.notes.append("survey weights sum below 2")

    rr_obs = rr_batch(model, sample.values)
    mu_obs = float(weighted_mean(rr_obs, probs))
    grad_obs = weighted_mean(rr_grad_beta_batch(model, sample.values), probs)

    if cft.is_zero:
        mu_cft = 1.0
        point = _point(mu_obs, mu_cft, cft)
        var_rr = float(weighted_mean((rr_obs - mu_obs) ** 2, probs))
        var_mu = var_rr / n + float(grad_obs @ model.beta_cov @ grad_obs)
        variance = var_mu / mu_obs**4
    else:
        if cft.is_identity:
            shifted = sample.values
            rr_cft, mu_cft = rr_obs, mu_obs
        else:
            shifted = cft_apply(cft, sample.values)
            rr_cft = rr_batch(model, shifted)
            mu_cft = float(weighted_mean(rr_cft, probs))
        point = _point(mu_obs, mu_cft, cft)

        deviations = np.column_stack([rr_obs - mu_obs, rr_cft - mu_cft])
        sigma_1 = weighted_mean(deviations[:, :, None] * deviations[:, None, :], probs)
        jacobian = np.vstack(
            [grad_obs, weighted_mean(rr_grad_beta_batch(model, shifted), probs)]
        )
        sigma_2 = jacobian @ model.beta_cov @ jacobian.T
        direction = np.array([mu_cft / mu_obs**2, -1.0 / mu_obs])
        variance = float(direction @ (sigma_1 / n + sigma_2) @ direction)

    diagnostics.mu_obs = mu_obs
    diagnostics.mu_cft = mu_cft
    return _wald(
        _quantity(cft), point, variance, level, Method.EMPIRICAL, diagnostics, clamp_upper
    )


def _approx_mu(model: RelativeRiskModel, center, spread, jacobian, cft, sd_term):
    """Second-order expected relative risk around the mean exposure."""
    image = center if cft is None else cft_apply(cft, center)
    if cft is not None and cft.is_zero:
        return rr_value(model, image)
    curvature = rr_hess_x(model, image)
    if jacobian is not None:
        curvature = jacobian.T @ curvature @ jacobian
    if sd_term:
        spread = np.sqrt(np.maximum(spread, 0.0))
    return rr_value(model, image) + 0.5 * float(np.sum(spread * curvature))


def _vech_indices(k: int) -> tuple:
    return np.tril_indices(k)


def approximate_estimate(
    stats: SummaryStats,
    model: RelativeRiskModel,
    cft: Optional[Counterfactual] = None,
    level: float = DEFAULT_LEVEL,
    mode: ApproxMode = ApproxMode.TAYLOR_VARIANCE,
    clamp_upper: bool = False,
) -> EstimateResult:
    """
    Approximate PAF/PIF from the exposure mean and covariance.

    E[RR] is expanded to second order around the mean. ``PAPER_SD`` mode
    (scalar exponential risk only) uses the standard deviation where the
    expansion has the variance. The standard error follows the delta method
    over (mean, vech(cov), beta) with independent blocks.

    Args:
        stats (SummaryStats): Exposure summary statistics.
        model (RelativeRiskModel): Relative risk with coefficient covariance.
        cft (Counterfactual, optional): Counterfactual; zero (PAF) if None.
        level (float): Confidence level.
        mode (ApproxMode): Expansion variant.
        clamp_upper (bool): Clamp the upper bound at 1.

    Returns:
        EstimateResult: Point, standard error and Wald interval.

    Raises:
        UnsupportedMode: PAPER_SD with k > 1 or a linear risk.
        NonDifferentiableCounterfactual: Clamped counterfactual at its kink.
    """
    cft = cft or Counterfactual.zero()
    mode = ApproxMode(mode)
    _check_dims(model, stats.k)
    k = stats.k
    sd_term = mode is ApproxMode.PAPER_SD

    if sd_term and (k != 1 or model.form is not RiskForm.EXPONENTIAL):
        raise UnsupportedMode(
            "paper-sd mode needs a scalar exposure and an exponential relative risk."
        )

    try:
        jacobian, _ = cft_derivs(cft, stats.mean)
    except NonDifferentiableAtPoint as error:
        logger.error("Approximate method rejected counterfactual %s", cft.label)
        raise NonDifferentiableCounterfactual(str(error)) from error

    rows, cols = _vech_indices(k)
    n_vech = rows.size
    diagnostics = Diagnostics()

    def unpack(z):
        center = z[:k]
        spread = np.zeros((k, k))
        spread[rows, cols] = z[k : k + n_vech]
        spread[cols, rows] = z[k : k + n_vech]
        beta = z[k + n_vech :]
        return center, spread, model.with_beta(beta)

    def mu_pair(z):
        center, spread, fitted = unpack(z)
        mu_obs = _approx_mu(fitted, center, spread, None, None, sd_term)
        if cft.is_identity:
            return mu_obs, mu_obs
        mu_cft = _approx_mu(fitted, center, spread, jacobian, cft, sd_term)
        return mu_obs, mu_cft

    def h(z):
        mu_obs, mu_cft = mu_pair(z)
        return _point(mu_obs, mu_cft, cft)

    z0 = np.concatenate([stats.mean, stats.cov[rows, cols], model.beta])
    mu_obs, mu_cft = mu_pair(z0)
    point = _point(mu_obs, mu_cft, cft)

    lower = np.full(z0.size, -np.inf)
    lower[k : k + n_vech][rows == cols] = 0.0
    gradient = gradient_fd(h, z0, lower=lower)

    n = stats.n
    vech_var = np.empty(n_vech)
    for index, (i, j) in enumerate(zip(rows, cols)):
        if i == j:
            var = stats.cov[i, i]
            vech_var[index] = 3.0 * var**2 / n - var**1.5 * (n - 3) / (n * (n - 1))
        else:
            vech_var[index] = (stats.cov[i, i] * stats.cov[j, j] + stats.cov[i, j] ** 2) / n
    if np.any(vech_var < 0):
        logger.warning("Clamped negative variance of the covariance estimate to 0.")
        diagnostics.notes.append("variance of the covariance estimate clamped at 0")
        vech_var = np.maximum(vech_var, 0.0)

    sigma = np.zeros((z0.size, z0.size))
    sigma[:k, :k] = stats.cov / n
    sigma[k : k + n_vech, k : k + n_vech] = np.diag(vech_var)
    sigma[k + n_vech :, k + n_vech :] = model.beta_cov
    variance = float(gradient @ sigma @ gradient)

    diagnostics.mu_obs = mu_obs
    diagnostics.mu_cft = mu_cft
    method = Method.APPROXIMATE_PAPER_SD if sd_term else Method.APPROXIMATE
    return _wald(_quantity(cft), point, variance, level, method, diagnostics, clamp_upper)


def _baseline_result(
    dist: FittedDistribution,
    model: RelativeRiskModel,
    cft: Counterfactual,
    method: Method,
) -> EstimateResult:
    observed = expected_rr(dist, model)
    if cft.is_zero:
        counterfactual = (1.0, False)
    elif cft.is_identity:
        counterfactual = observed
    else:
        counterfactual = expected_rr(dist, model, cft)

    diagnostics = Diagnostics(
        mu_obs=observed[0], mu_cft=counterfactual[0], divergent=observed[1]
    )
    if cft.is_identity:
        point = 0.0
    elif observed[1] and counterfactual[1]:
        diagnostics.notes.append("observed and counterfactual expectations both diverge")
        point = math.nan
    elif observed[1]:
        diagnostics.notes.append("observed expected relative risk is infinite")
        point = 1.0
    else:
        point = _point(observed[0], counterfactual[0], cft)

    return EstimateResult(
        quantity=_quantity(cft), point=point, method=method, diagnostics=diagnostics
    )


def standard_estimate(
    dist: FittedDistribution,
    model: RelativeRiskModel,
    cft: Optional[Counterfactual] = None,
) -> EstimateResult:
    """
    Parametric PAF/PIF 1 - E_cft[RR]/E_obs[RR] under an assumed family.

    A divergent observed expectation yields point 1 with the divergent flag;
    no standard error is reported.
    """
    return _baseline_result(dist, model, cft or Counterfactual.zero(), Method.STANDARD)


def standard_from_summary(
    family,
    mean_value: float,
    var: float,
    model: RelativeRiskModel,
    cft: Optional[Counterfactual] = None,
    renormalize: bool = True,
) -> EstimateResult:
    """Moment fit, exposure convention and :func:`standard_estimate` in one call."""
    dist = exposure_model(fit_moments(family, mean_value, var), renormalize=renormalize)
    return standard_estimate(dist, model, cft)


def mixture_estimate(
    p0: float,
    dist: FittedDistribution,
    model: RelativeRiskModel,
    upper: Optional[float] = None,
    cft: Optional[Counterfactual] = None,
) -> EstimateResult:
    """
    Zero-inflated parametric PAF/PIF with optional truncation at ``upper``.

    PAF = 1 - 1/[p0 + (1 - p0) * int_0^M RR f / int_0^M f]; without
    ``upper`` the positive part is untruncated above and may diverge. The
    positive part always lives on [0, M], so a Normal without a lower
    bound is cut at 0.
    """
    lower = 0.0 if dist.lower is None else dist.lower
    mixture = replace(dist, zero_mass=p0, lower=lower, upper=upper, renormalize=True)
    return _baseline_result(mixture, model, cft or Counterfactual.zero(), Method.MIXTURE)


def true_pif_oracle(
    dist: FittedDistribution,
    model: RelativeRiskModel,
    cft: Optional[Counterfactual] = None,
) -> float:
    """Population PIF 1 - E_cft[RR]/E_obs[RR] of a generating distribution."""
    result = _baseline_result(dist, model, cft or Counterfactual.zero(), Method.STANDARD)
    if result.diagnostics.divergent:
        logger.warning("True PIF of %s is not finite.", dist.describe())
    return result.point


def true_paf_oracle(dist: FittedDistribution, model: RelativeRiskModel) -> float:
    """Population PAF 1 - 1/E[RR] of a generating distribution."""
    return true_pif_oracle(dist, model, Counterfactual.zero())


def uniform_pmf(values: Sequence) -> dict:
    """Treats each row of a finite sample as an atom of mass 1/n."""
    rows = [tuple(np.atleast_1d(row).tolist()) for row in values]
    if len(set(rows)) != len(rows):
        raise InvalidPmf("Sample rows must be distinct to form a uniform pmf.")
    mass = 1.0 / len(rows)
    return {row if len(row) > 1 else row[0]: mass for row in rows}
