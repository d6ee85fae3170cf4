"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from tqdm import tqdm

from distributions import (
    Family,
    FittedDistribution,
    exposure_model,
    parent_mean,
    parent_var,
    sample,
)
from errors import InvalidScenario, InvalidSpecification, PifpafError
from estimators import (
    ApproxMode,
    ExposureSample,
    approximate_estimate,
    empirical_estimate,
    mixture_estimate,
    standard_from_summary,
    true_pif_oracle,
)
from logutils import get_logger
from rr_models import Counterfactual, RelativeRiskModel
from run_config import Defaults
from schemas import (
    BiasGridRow,
    CurvePoint,
    EstimateResult,
    Method,
    MethodSummary,
    Quantity,
    ScenarioReport,
)
from utils import default_threads, parse_grid

logger = get_logger(__name__)

SSB_BETA = math.log(1.27)
SSB_BETA_SE = 0.0443
REFERENCE_N = 10000


@dataclass(frozen=True)
class Scenario:
    """
    One cell of the coverage study.

    The coefficient variance is sigma^2(n) = reference_n * beta_se^2 / n; it
    drives both the per-replication draw of beta and the covariance handed
    to the estimators.
    """

    family: Family
    params: tuple
    p0: float
    n: int
    replications: int = 1000
    beta0: float = SSB_BETA
    beta_se: float = SSB_BETA_SE
    reference_n: int = REFERENCE_N
    lower: float = 0.0
    upper: float = 12.0
    renormalize: bool = True
    seed: int = 0
    cft: Counterfactual = field(default_factory=Counterfactual.zero)
    approx_mode: ApproxMode = ApproxMode.TAYLOR_VARIANCE

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "params", tuple(float(value) for value in self.params))
        object.__setattr__(self, "approx_mode", ApproxMode(self.approx_mode))
        if self.replications < 1:
            raise InvalidScenario(f"Replications must be >= 1, got {self.replications}.")
        if self.n < 2:
            raise InvalidScenario(f"Sample size must be >= 2, got {self.n}.")
        if not 0.0 <= self.p0 <= 1.0:
            raise InvalidScenario(f"p0 must lie in [0, 1], got {self.p0}.")
        if not self.beta_var > 0:
            raise InvalidScenario("The coefficient variance sigma^2(n) must be positive.")
        try:
            self.distribution
        except InvalidSpecification as error:
            raise InvalidScenario(str(error)) from error

    @property
    def beta_var(self) -> float:
        return self.reference_n * self.beta_se**2 / self.n

    @property
    def distribution(self) -> FittedDistribution:
        """Zero-inflated, truncated generating distribution."""
        return FittedDistribution(
            self.family,
            self.params,
            lower=self.lower,
            upper=self.upper,
            renormalize=self.renormalize,
            zero_mass=self.p0,
        )

    @property
    def label(self) -> str:
        params = ",".join(f"{value:g}" for value in self.params)
        text = f"{self.family.value}({params}) p0={self.p0:g} n={self.n}"
        return text if self.cft.is_zero else f"{text} cft={self.cft.label}"

    def model(self, beta: Optional[float] = None) -> RelativeRiskModel:
        return RelativeRiskModel.from_beta(
            self.beta0 if beta is None else beta, se=math.sqrt(self.beta_var)
        )


def _replicate(scenario: Scenario, index: int) -> tuple:
    """Runs replication ``index`` on its own stream derived from (seed, index)."""
    rng = np.random.default_rng([scenario.seed, index])
    exposures = sample(scenario.distribution, scenario.n, rng)
    beta = rng.normal(scenario.beta0, math.sqrt(scenario.beta_var))
    model = scenario.model(beta)
    data = ExposureSample(exposures)

    results = []
    for estimate in (
        lambda: empirical_estimate(data, model, scenario.cft),
        lambda: approximate_estimate(
            data.summary(), model, scenario.cft, mode=scenario.approx_mode
        ),
    ):
        try:
            results.append(estimate())
        except PifpafError as error:
            logger.warning("Replication %d of %s failed: %s", index, scenario.label, error)
            results.append(None)
    return tuple(results)


def _summarise(
    method: Method, results: Sequence[Optional[EstimateResult]], truth: float
) -> MethodSummary:
    succeeded = [result for result in results if result is not None]
    summary = MethodSummary(
        method=method,
        failures=len(results) - len(succeeded),
        replications=len(results),
    )
    if not succeeded:
        return summary

    points = np.array([result.point for result in succeeded])
    ses = np.array([result.se for result in succeeded])
    covered = sum(result.covers(truth) for result in succeeded)

    summary.mean_estimate = float(np.mean(points))
    summary.mean_se = float(np.mean(ses))
    summary.coverage = covered / len(results)
    if truth != 0.0:
        summary.mean_rel_bias = float(np.mean((points - truth) / truth))
    if points.size > 1:
        summary.sd_of_estimates = float(np.std(points, ddof=1))
    return summary


def _method_tag(scenario: Scenario) -> Method:
    if scenario.approx_mode is ApproxMode.PAPER_SD:
        return Method.APPROXIMATE_PAPER_SD
    return Method.APPROXIMATE


def run_scenario(
    scenario: Scenario, threads: Optional[int] = None, progress: bool = False
) -> ScenarioReport:
    """
    Runs all replications of a scenario and summarises both estimators.

    Replications are independent and run on a thread pool; results are
    reduced in replication order so the report does not depend on the
    thread count.

    Args:
        scenario (Scenario): Scenario to run.
        threads (int, optional): Worker count; ``PIFPAF_THREADS`` or the CPU
            count when omitted.
        progress (bool): Show a progress bar.

    Returns:
        ScenarioReport: Truth and per-method summaries.
    """
    threads = threads or default_threads()
    truth = true_pif_oracle(scenario.distribution, scenario.model(), scenario.cft)
    logger.info(
        "Running %s with %d replications on %d thread(s)",
        scenario.label,
        scenario.replications,
        threads,
    )

    with ThreadPoolExecutor(max_workers=threads) as executor:
        outcomes = list(
            tqdm(
                executor.map(
                    lambda index: _replicate(scenario, index),
                    range(scenario.replications),
                ),
                total=scenario.replications,
                desc=scenario.label,
                disable=not progress,
            )
        )

    methods = [
        _summarise(Method.EMPIRICAL, [outcome[0] for outcome in outcomes], truth),
        _summarise(_method_tag(scenario), [outcome[1] for outcome in outcomes], truth),
    ]
    for summary in methods:
        if summary.failures:
            logger.warning(
                "%s: %d of %d %s replications failed",
                scenario.label,
                summary.failures,
                summary.replications,
                summary.method.value,
            )

    logger.info("Finished %s (true value %.4f)", scenario.label, truth)
    return ScenarioReport(
        label=scenario.label,
        family=scenario.family.value,
        parameters=scenario.distribution.parameters,
        p0=scenario.p0,
        n=scenario.n,
        replications=scenario.replications,
        seed=scenario.seed,
        true_paf=truth,
        methods=methods,
    )


def default_suite(
    defaults: Optional[Defaults] = None,
    replications: Optional[int] = None,
    seed: Optional[int] = None,
    approx_mode: ApproxMode = ApproxMode.TAYLOR_VARIANCE,
) -> list[Scenario]:
    """Family x p0 x n grid of the coverage study."""
    defaults = defaults or Defaults()
    model = defaults.risk_model()
    suite = []
    for dist in defaults.distributions("simulation", "families"):
        for p0 in defaults.get_floats("simulation", "p0"):
            for n in defaults.get_floats("simulation", "n"):
                suite.append(
                    Scenario(
                        family=dist.family,
                        params=dist.params,
                        p0=p0,
                        n=int(n),
                        replications=replications
                        or defaults.get_int("simulation", "replications"),
                        beta0=float(model.beta[0]),
                        beta_se=defaults.get_float("simulation", "beta_se"),
                        reference_n=defaults.get_int("simulation", "reference_n"),
                        lower=defaults.get_float("simulation", "lower"),
                        upper=defaults.get_float("simulation", "upper"),
                        seed=defaults.get_int("simulation", "seed") if seed is None else seed,
                        approx_mode=approx_mode,
                    )
                )
    return suite


def run_suite(
    scenarios: Sequence[Scenario], threads: Optional[int] = None, progress: bool = False
) -> list[ScenarioReport]:
    return [run_scenario(scenario, threads, progress) for scenario in scenarios]


def scenario_rows(reports: Sequence[ScenarioReport]) -> list[dict]:
    """Flattens reports into one row per (scenario, method)."""
    rows = []
    for report in reports:
        for summary in report.methods:
            rows.append(
                {
                    "scenario": report.label,
                    "family": report.family,
                    "p0": report.p0,
                    "n": report.n,
                    "replications": report.replications,
                    "seed": report.seed,
                    "true_paf": report.true_paf,
                    **summary.model_dump(mode="json"),
                }
            )
    return rows


def bias_grid(
    true_specs: Sequence[FittedDistribution],
    assumed_families: Sequence,
    model: RelativeRiskModel,
    renormalize: bool = True,
) -> list[BiasGridRow]:
    """
    Relative bias (%) of the standard method under wrong family assumptions.

    The truth uses each true distribution under the renormalized exposure
    convention; each assumed family is moment-matched to the true family's
    untruncated mean and variance and evaluated under ``renormalize``.
    """
    convention = "renormalized" if renormalize else "unnormalized"
    rows = []
    for true_dist in true_specs:
        truth = true_pif_oracle(exposure_model(true_dist, renormalize=True), model)
        moments = parent_mean(true_dist), parent_var(true_dist)
        for family in assumed_families:
            family = Family(family)
            assumed = standard_from_summary(
                family, *moments, model, renormalize=renormalize
            )
            rows.append(
                BiasGridRow(
                    true_label=true_dist.describe(),
                    assumed_family=family.value,
                    convention=convention,
                    paf_true=truth,
                    paf_assumed=assumed.point,
                    divergent=assumed.diagnostics.divergent,
                    relative_bias=100.0 * (assumed.point - truth) / truth,
                )
            )
    logger.debug("Bias grid (%s): %d cells", convention, len(rows))
    return rows


def truncation_curve(
    dist: FittedDistribution,
    model: RelativeRiskModel,
    cfts: Sequence[Counterfactual],
    m_grid,
) -> list[CurvePoint]:
    """
    PAF/PIF of the zero-inflated family truncated at each bound M.

    Args:
        dist (FittedDistribution): Family, p0 and lower bound; the upper bound
            is replaced by each M.
        model (RelativeRiskModel): Scalar relative risk.
        cfts (Sequence[Counterfactual]): Counterfactuals to evaluate.
        m_grid: Bounds as an array or ``start:stop:step`` text.
    """
    grid = parse_grid(m_grid) if isinstance(m_grid, str) else np.asarray(m_grid, dtype=float)
    points = []
    for upper in grid:
        for cft in cfts:
            result = mixture_estimate(dist.zero_mass, dist, model, upper=float(upper), cft=cft)
            points.append(
                CurvePoint(
                    upper=float(upper),
                    counterfactual=cft.label,
                    quantity=Quantity.PAF if cft.is_zero else Quantity.PIF,
                    value=result.point,
                )
            )
    return points
