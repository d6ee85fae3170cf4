"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from scipy.optimize import brentq
from scipy.special import digamma, gammaln

from errors import (
    DegenerateSample,
    DimensionMismatch,
    InfeasibleMoments,
    InvalidSpecification,
    NonPositiveData,
    NonPositiveRisk,
)
from logutils import get_logger
from numerics import integrate_gk, maximize_bfgs
from rr_models import Counterfactual, RelativeRiskModel, RiskForm, cft_apply, rr_batch

logger = get_logger(__name__)

MLE_TOL = 1e-6
WEIBULL_SHAPE_BRACKET = (1e-2, 1e4)


class Family(str, Enum):
    """Parametric exposure families."""

    GAMMA = "gamma"
    LOGNORMAL = "lognormal"
    NORMAL = "normal"
    WEIBULL = "weibull"


class FitMethod(str, Enum):
    """How a distribution's parameters were obtained."""

    MOM = "mom"
    MLE = "mle"
    MANUAL = "manual"


PARAMETER_NAMES = {
    Family.GAMMA: ("shape", "scale"),
    Family.LOGNORMAL: ("logmu", "logsigma"),
    Family.NORMAL: ("mu", "sigma"),
    Family.WEIBULL: ("shape", "scale"),
}

POSITIVE_FAMILIES = (Family.GAMMA, Family.LOGNORMAL, Family.WEIBULL)


class ExpectedRR(NamedTuple):
    """Expected relative risk; ``divergent`` marks an infinite expectation."""

    value: float
    divergent: bool = False

    @classmethod
    def finite(cls, value: float) -> "ExpectedRR":
        return cls(float(value), False)

    @classmethod
    def diverges(cls) -> "ExpectedRR":
        return cls(math.inf, True)


@dataclass(frozen=True)
class FittedDistribution:
    """
    A parametric exposure distribution, optionally truncated to
    [lower, upper] and inflated with a point mass ``zero_mass`` at zero.

    ``params`` holds (shape, scale) for Gamma and Weibull, (logmu, logsigma)
    for Lognormal and (mu, sigma) for Normal.
    """

    family: Family
    params: tuple
    lower: Optional[float] = None
    upper: Optional[float] = None
    renormalize: bool = True
    zero_mass: float = 0.0
    fit_method: FitMethod = FitMethod.MANUAL

    def __post_init__(self):
        family = Family(self.family)
        params = tuple(float(value) for value in self.params)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "fit_method", FitMethod(self.fit_method))

        if len(params) != 2 or not all(math.isfinite(value) for value in params):
            raise InvalidSpecification(
                f"{family.value} needs two finite parameters, got {self.params}."
            )
        if params[1] <= 0 or (family in (Family.GAMMA, Family.WEIBULL) and params[0] <= 0):
            raise InvalidSpecification(
                f"Scale and shape parameters of {family.value} must be positive, "
                f"got {params}."
            )
        if self.lower is not None and self.lower < 0:
            raise InvalidSpecification(f"Lower truncation must be >= 0, got {self.lower}.")
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            raise InvalidSpecification(
                f"Truncation window [{self.lower}, {self.upper}] is empty."
            )
        if not 0.0 <= self.zero_mass <= 1.0:
            raise InvalidSpecification(f"zero_mass must lie in [0, 1], got {self.zero_mass}.")

    @property
    def parent(self):
        """The untruncated scipy distribution."""
        first, second = self.params
        match self.family:
            case Family.GAMMA:
                return stats.gamma(a=first, scale=second)
            case Family.LOGNORMAL:
                return stats.lognorm(s=second, scale=math.exp(first))
            case Family.NORMAL:
                return stats.norm(loc=first, scale=second)
            case Family.WEIBULL:
                return stats.weibull_min(c=first, scale=second)

    @property
    def parameters(self) -> dict:
        """Parameters keyed by name."""
        return dict(zip(PARAMETER_NAMES[self.family], self.params))

    @property
    def natural_lower(self) -> float:
        return -math.inf if self.family is Family.NORMAL else 0.0

    @property
    def is_truncated(self) -> bool:
        """A lower bound at or below the natural support does not truncate."""
        cut_below = self.lower is not None and self.lower > self.natural_lower
        return cut_below or self.upper is not None

    @property
    def window(self) -> tuple:
        """Support of the continuous part as ``(lo, hi)``."""
        natural = self.natural_lower
        lo = natural if self.lower is None else max(self.lower, natural)
        hi = math.inf if self.upper is None else self.upper
        return lo, hi

    @property
    def window_mass(self) -> float:
        """Parent probability of the truncation window."""
        lo, hi = self.window
        parent = self.parent
        if hi == math.inf:
            return float(parent.sf(lo))
        return float(parent.cdf(hi) - parent.cdf(lo))

    def with_truncation(
        self,
        lower: Optional[float] = None,
        upper: Optional[float] = None,
        renormalize: bool = True,
    ) -> "FittedDistribution":
        return replace(self, lower=lower, upper=upper, renormalize=renormalize)

    def with_zero_mass(self, zero_mass: float) -> "FittedDistribution":
        return replace(self, zero_mass=zero_mass)

    def describe(self) -> str:
        params = ", ".join(f"{name}={value:.4g}" for name, value in self.parameters.items())
        text = f"{self.family.value}({params})"
        if self.is_truncated:
            lo, hi = self.window
            text += f" on [{lo:g}, {hi:g}]"
            text += "" if self.renormalize else " (unnormalized)"
        if self.zero_mass:
            text += f" with p0={self.zero_mass:g}"
        return text


def _normalizer(dist: FittedDistribution) -> float:
    if dist.is_truncated and dist.renormalize:
        mass = dist.window_mass
        if not mass > 0.0:
            raise InvalidSpecification(
                f"Truncation window of {dist.describe()} carries no probability."
            )
        return mass
    return 1.0


def continuous_logpdf(dist: FittedDistribution, x) -> np.ndarray:
    """Log density of the continuous part before zero inflation."""
    x = np.asarray(x, dtype=float)
    lo, hi = dist.window
    with np.errstate(divide="ignore"):
        values = dist.parent.logpdf(x) - math.log(_normalizer(dist))
    return np.where((x >= lo) & (x <= hi), values, -np.inf)


def pdf(dist: FittedDistribution, x):
    """
    Density of the continuous part, scaled by (1 - p0).

    Inside the window a renormalized distribution has density
    parent_pdf / window_mass; outside it the density is zero.
    """
    values = (1.0 - dist.zero_mass) * np.exp(continuous_logpdf(dist, x))
    return float(values) if np.ndim(values) == 0 else values


def cdf(dist: FittedDistribution, x):
    """Distribution function including the point mass at zero."""
    x = np.asarray(x, dtype=float)
    lo, hi = dist.window
    parent = dist.parent
    clipped = np.clip(x, lo, hi)
    base = 0.0 if lo == -math.inf else float(parent.cdf(lo))
    continuous = (parent.cdf(clipped) - base) / _normalizer(dist)
    continuous = np.where(x < lo, 0.0, np.clip(continuous, 0.0, 1.0))
    values = (1.0 - dist.zero_mass) * continuous + dist.zero_mass * (x >= 0.0)
    return float(values) if np.ndim(values) == 0 else values


def parent_mean(dist: FittedDistribution) -> float:
    """Mean of the untruncated family."""
    return float(dist.parent.mean())


def parent_var(dist: FittedDistribution) -> float:
    """Variance of the untruncated family."""
    return float(dist.parent.var())


def truncated_mean(dist: FittedDistribution) -> float:
    """Mean of the continuous part conditional on the truncation window."""
    if not dist.is_truncated:
        return parent_mean(dist)
    lo, hi = dist.window
    parent = dist.parent
    result = integrate_gk(lambda x: x * parent.pdf(x), lo, hi)
    return result.value / dist.window_mass


def mean(dist: FittedDistribution) -> float:
    """Mean of the zero-inflated distribution."""
    return (1.0 - dist.zero_mass) * truncated_mean(dist)


def exposure_model(
    dist: FittedDistribution, renormalize: bool = True
) -> FittedDistribution:
    """
    Applies the exposure convention: a Normal without a lower bound is
    truncated at zero; other families keep their natural support.
    """
    if dist.family is Family.NORMAL and dist.lower is None:
        return replace(dist, lower=0.0, renormalize=renormalize)
    return replace(dist, renormalize=renormalize)


def fit_moments(family, mean_value: float, var: float) -> FittedDistribution:
    """
    Method-of-moments fit of an untruncated family.

    Args:
        family (Family | str): Target family.
        mean_value (float): Target mean.
        var (float): Target variance.

    Returns:
        FittedDistribution: Parameters reproducing the mean and variance.

    Raises:
        InfeasibleMoments: If no parameter vector matches the moments.
    """
    family = Family(family)
    if not (math.isfinite(mean_value) and math.isfinite(var)) or var <= 0:
        raise InfeasibleMoments(
            f"Moments must be finite with positive variance, got mean={mean_value}, "
            f"var={var}."
        )
    if family in POSITIVE_FAMILIES and mean_value <= 0:
        raise InfeasibleMoments(
            f"{family.value} requires a positive mean, got {mean_value}."
        )

    match family:
        case Family.GAMMA:
            params = (mean_value**2 / var, var / mean_value)
        case Family.LOGNORMAL:
            log_var = math.log1p(var / mean_value**2)
            params = (math.log(mean_value) - 0.5 * log_var, math.sqrt(log_var))
        case Family.NORMAL:
            params = (mean_value, math.sqrt(var))
        case Family.WEIBULL:
            params = _weibull_moments(mean_value, var)

    dist = FittedDistribution(family, params, fit_method=FitMethod.MOM)
    logger.debug("Method-of-moments fit: %s", dist.describe())
    return dist


def _weibull_moments(mean_value: float, var: float) -> tuple:
    """Solves the coefficient-of-variation equation for the Weibull shape."""
    target = math.log1p(var / mean_value**2)

    def excess(shape):
        return gammaln(1.0 + 2.0 / shape) - 2.0 * gammaln(1.0 + 1.0 / shape) - target

    low, high = WEIBULL_SHAPE_BRACKET
    if excess(low) * excess(high) > 0:
        logger.error(
            "Weibull shape outside [%s, %s] for mean=%s, var=%s", low, high, mean_value, var
        )
        raise InfeasibleMoments(
            f"No Weibull shape in [{low}, {high}] matches mean={mean_value}, var={var}."
        )

    shape = brentq(excess, low, high, xtol=1e-14, rtol=1e-15, maxiter=500)
    scale = mean_value / math.exp(gammaln(1.0 + 1.0 / shape))
    return shape, scale


def _validate_data(family: Family, data) -> np.ndarray:
    values = np.asarray(data, dtype=float).reshape(-1)
    if values.size < 2:
        raise DegenerateSample(f"Fitting needs at least 2 observations, got {values.size}.")
    if not np.all(np.isfinite(values)):
        raise InvalidSpecification("Fitting data must be finite.")
    if family in POSITIVE_FAMILIES and np.any(values <= 0):
        raise NonPositiveData(
            f"{family.value} fitting needs strictly positive data; separate zeros "
            "with split_zeros first."
        )
    if np.ptp(values) == 0.0:
        raise DegenerateSample("Fitting data has zero variance.")
    return values


def _gamma_loglik(log_params, data, log_sum, total):
    shape, scale = np.exp(log_params)
    n = data.size
    return (
        (shape - 1.0) * log_sum
        - total / scale
        - n * (shape * math.log(scale) + gammaln(shape))
    )


def _gamma_loglik_grad(log_params, data, log_sum, total):
    shape, scale = np.exp(log_params)
    n = data.size
    d_shape = log_sum - n * math.log(scale) - n * digamma(shape)
    d_scale = total / scale**2 - n * shape / scale
    return np.array([shape * d_shape, scale * d_scale])


def _weibull_loglik(log_params, data, log_sum):
    shape, scale = np.exp(log_params)
    n = data.size
    return (
        n * math.log(shape)
        - n * shape * math.log(scale)
        + (shape - 1.0) * log_sum
        - float(np.sum((data / scale) ** shape))
    )


def fit_mle(family, data: Sequence[float], line_search: str = "wolfe") -> FittedDistribution:
    """
    Maximum likelihood fit of an untruncated family.

    Normal and Lognormal use closed-form moments (1/n denominators); Gamma
    and Weibull run BFGS over log-parameters started at the moment fit.

    Args:
        family (Family | str): Target family.
        data (Sequence[float]): Observations.
        line_search (str): Line search used by BFGS.

    Returns:
        FittedDistribution: The fitted distribution.

    Raises:
        NonPositiveData: Zero or negative data for a positive family.
        DegenerateSample: Fewer than two observations or no spread.
        OptimizerDiverged: If BFGS fails.
    """
    family = Family(family)
    values = _validate_data(family, data)

    match family:
        case Family.NORMAL:
            params = (float(np.mean(values)), float(np.std(values)))
        case Family.LOGNORMAL:
            logs = np.log(values)
            params = (float(np.mean(logs)), float(np.std(logs)))
        case Family.GAMMA | Family.WEIBULL:
            start = _mle_start(family, values)
            log_sum = float(np.sum(np.log(values)))
            if family is Family.GAMMA:
                total = float(np.sum(values))
                result = maximize_bfgs(
                    lambda z: _gamma_loglik(z, values, log_sum, total),
                    np.log(start),
                    grad=lambda z: _gamma_loglik_grad(z, values, log_sum, total),
                    tol=MLE_TOL,
                    line_search=line_search,
                )
            else:
                result = maximize_bfgs(
                    lambda z: _weibull_loglik(z, values, log_sum),
                    np.log(start),
                    tol=MLE_TOL,
                    line_search=line_search,
                )
            params = tuple(float(value) for value in np.exp(result.argmax))
            logger.debug(
                "%s MLE converged in %d iterations (loglik=%s)",
                family.value,
                result.iterations,
                result.value,
            )

    return FittedDistribution(family, params, fit_method=FitMethod.MLE)


def _mle_start(family: Family, values: np.ndarray) -> tuple:
    try:
        return fit_moments(family, float(np.mean(values)), float(np.var(values))).params
    except InfeasibleMoments:
        logger.warning("Moment start infeasible for %s; starting at shape 1.", family.value)
        return 1.0, float(np.mean(values))


def split_zeros(data: Sequence[float]) -> tuple:
    """
    Separates exact zeros from positive exposures.

    Returns:
        tuple: ``(p0, positives)`` with p0 the share of zeros.

    Raises:
        NonPositiveData: If any observation is negative.
    """
    values = np.asarray(data, dtype=float).reshape(-1)
    if np.any(values < 0):
        raise NonPositiveData("Exposure data for the mixture method must be >= 0.")
    if values.size == 0:
        raise DegenerateSample("No observations to split.")
    zeros = values == 0.0
    return float(np.mean(zeros)), values[~zeros]


def fit_mixture(
    family,
    data: Sequence[float],
    upper: Optional[float] = None,
) -> FittedDistribution:
    """
    MLE on the positive observations with the share of zeros as p0.

    The positive part is bounded below at 0.
    """
    p0, positives = split_zeros(data)
    dist = fit_mle(family, positives)
    return replace(dist, zero_mass=p0, lower=0.0, upper=upper)


def log_likelihood(dist: FittedDistribution, data: Sequence[float]) -> float:
    """Log-likelihood of ``data`` including the point mass at zero."""
    values = np.asarray(data, dtype=float).reshape(-1)
    if dist.zero_mass == 0.0:
        return float(np.sum(continuous_logpdf(dist, values)))

    zeros = values == 0.0
    with np.errstate(divide="ignore"):
        zero_part = zeros.sum() * math.log(dist.zero_mass)
        positive_part = np.sum(continuous_logpdf(dist, values[~zeros]))
        positive_part += (~zeros).sum() * math.log1p(-dist.zero_mass)
    return float(zero_part + positive_part)


def density_curve(dist: FittedDistribution, x_grid: Sequence[float]) -> pd.DataFrame:
    """Evaluates the density on a grid for plotting."""
    grid = np.asarray(x_grid, dtype=float)
    return pd.DataFrame({"x": grid, "density": pdf(dist, grid)})


def sample(dist: FittedDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draws ``n`` exposures: zero with probability p0, otherwise inverse-CDF
    sampling from the truncated family.

    Truncated draws always follow the renormalized window distribution.
    """
    if n < 1:
        raise InvalidSpecification(f"Sample size must be >= 1, got {n}.")

    zero = rng.random(n) < dist.zero_mass
    lo, hi = dist.window
    parent = dist.parent
    u_low = 0.0 if lo == -math.inf else float(parent.cdf(lo))
    u_high = 1.0 if hi == math.inf else float(parent.cdf(hi))
    draws = parent.ppf(rng.uniform(u_low, u_high, n))
    draws = np.clip(draws, lo, hi)
    draws[zero] = 0.0
    return draws


def _scalar_beta(model: RelativeRiskModel) -> float:
    if model.k != 1:
        raise DimensionMismatch(
            f"Parametric exposure models are scalar; the risk model has k={model.k}."
        )
    return float(model.beta[0])


def _closed_form(
    dist: FittedDistribution, model: RelativeRiskModel, cft: Counterfactual
) -> Optional[ExpectedRR]:
    """Analytic E[RR(g(X))] over an untruncated family, or None."""
    beta = _scalar_beta(model)
    slope, offset = cft.affine_coefficients()
    offset = float(offset[0])

    if model.form is RiskForm.LINEAR:
        if not cft.is_affine:
            return None
        value = 1.0 + beta * (slope * parent_mean(dist) + offset)
        if value <= 0:
            raise NonPositiveRisk("Expected linear relative risk is not positive.")
        return ExpectedRR.finite(value)

    # Tail growth rate of beta*g(x) as x grows.
    t = beta * slope if (cft.is_affine or slope > 0) else 0.0
    first, second = dist.params

    match dist.family:
        case Family.LOGNORMAL if t > 0:
            return ExpectedRR.diverges()
        case Family.WEIBULL if t > 0 and first < 1.0:
            return ExpectedRR.diverges()
        case Family.WEIBULL if t > 0 and first == 1.0 and t * second >= 1.0:
            return ExpectedRR.diverges()
        case Family.GAMMA if t * second >= 1.0:
            return ExpectedRR.diverges()

    if not cft.is_affine:
        return None
    if t == 0.0:
        return ExpectedRR.finite(math.exp(beta * offset))

    match dist.family:
        case Family.GAMMA:
            value = (1.0 - t * second) ** (-first)
        case Family.NORMAL:
            value = math.exp(t * first + 0.5 * t * t * second * second)
        case Family.WEIBULL if first == 1.0:
            value = 1.0 / (1.0 - t * second)
        case _:
            return None
    return ExpectedRR.finite(math.exp(beta * offset) * value)


def _continuous_expected_rr(
    dist: FittedDistribution,
    model: RelativeRiskModel,
    cft: Counterfactual,
    force_quadrature: bool,
) -> ExpectedRR:
    if not dist.is_truncated:
        closed = _closed_form(dist, model, cft)
        if closed is not None and (closed.divergent or not force_quadrature):
            return closed
    elif dist.upper is None and model.form is RiskForm.EXPONENTIAL:
        # Open above: the tail verdict of the parent family still holds.
        closed = _closed_form(dist, model, cft)
        if closed is not None and closed.divergent:
            return closed

    beta = _scalar_beta(model)
    lo, hi = dist.window
    parent = dist.parent

    if model.form is RiskForm.EXPONENTIAL:

        def integrand(x):
            with np.errstate(divide="ignore"):
                exponent = beta * cft_apply(cft, x) + parent.logpdf(x)
            return np.exp(exponent)

    else:

        def integrand(x):
            with np.errstate(divide="ignore"):
                density = np.exp(parent.logpdf(x))
            return rr_batch(model, cft_apply(cft, x)) * density

    result = integrate_gk(integrand, lo, hi)
    logger.debug(
        "E[RR] by quadrature for %s: %s (%d subintervals)",
        dist.describe(),
        result.value,
        result.subdivisions,
    )
    return ExpectedRR.finite(result.value / _normalizer(dist))


def expected_rr(
    dist: FittedDistribution,
    model: RelativeRiskModel,
    cft: Optional[Counterfactual] = None,
    force_quadrature: bool = False,
) -> ExpectedRR:
    """
    Expected relative risk (1 - p0) E[RR(g(X))] + p0 RR(g(0)).

    Closed forms are used for untruncated families where they exist;
    otherwise adaptive quadrature runs over the truncation window, divided
    by the window mass when the distribution is renormalized. Infinite
    expectations are detected analytically and returned as divergent.

    Args:
        dist (FittedDistribution): Exposure distribution.
        model (RelativeRiskModel): Scalar relative risk model.
        cft (Counterfactual, optional): Transformation g; identity if None.
        force_quadrature (bool): Skip finite closed forms.

    Returns:
        ExpectedRR: The expectation or the divergent marker.

    Raises:
        DimensionMismatch: If the risk model is not scalar.
        QuadratureFailure: If quadrature does not converge.
    """
    cft = cft or Counterfactual.identity()
    beta = _scalar_beta(model)
    if beta == 0.0:
        return ExpectedRR.finite(1.0)

    at_zero = float(rr_batch(model, cft_apply(cft, np.zeros(1)))[0])
    if dist.zero_mass == 1.0:
        return ExpectedRR.finite(at_zero)

    continuous = _continuous_expected_rr(dist, model, cft, force_quadrature)
    if continuous.divergent:
        logger.warning("E[RR] diverges for %s", dist.describe())
        return continuous

    p0 = dist.zero_mass
    return ExpectedRR.finite((1.0 - p0) * continuous.value + p0 * at_zero)
