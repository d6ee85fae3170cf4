"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import functools
import math
from typing import Optional

import click
import numpy as np

from data_io import (
    estimate_rows,
    read_exposure_csv,
    render_csv,
    render_json,
    render_table,
    write_text,
)
from distributions import (
    Family,
    FittedDistribution,
    density_curve,
    fit_mixture,
    fit_mle,
    fit_moments,
    log_likelihood,
    parent_mean,
    parent_var,
    split_zeros,
)
from errors import InputError, InvalidSpecification, NumericalError
from estimators import (
    ApproxMode,
    SummaryStats,
    approximate_estimate,
    empirical_estimate,
    mixture_estimate,
    standard_from_summary,
)
from logutils import get_logger, set_log_level
from rr_models import Counterfactual, RelativeRiskModel, RiskForm
from run_config import TOOL_VERSION, Defaults, RunConfig
from schemas import DensityPoint, FitReport, OutputDocument
from sentry_config import SENTRY_ENABLED, initialize_sentry, report_exception
from simulation import (
    Scenario,
    bias_grid,
    default_suite,
    run_suite,
    scenario_rows,
    truncation_curve,
)
from utils import parse_float_list, parse_grid, parse_pair

logger = get_logger(__name__)

EXIT_USAGE = 2
EXIT_NUMERICAL = 3
NOT_APPLICABLE = "n/a"

FAMILIES = click.Choice([family.value for family in Family], case_sensitive=False)


def handle_errors(func):
    """Maps input errors to exit code 2 and numerical failures to exit code 3."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except InputError as error:
            logger.error("Invalid input: %s", error)
            click.echo(f"Error: {error}", err=True)
            raise click.exceptions.Exit(EXIT_USAGE) from error
        except NumericalError as error:
            logger.error("Numerical failure: %s", error)
            report_exception(error)
            click.echo(f"Numerical error: {error}", err=True)
            raise click.exceptions.Exit(EXIT_NUMERICAL) from error

    return wrapper


def emit(payload, rows, method: str, seed: Optional[int] = None, conventions=None):
    """Renders the command result in the format chosen on the group."""
    ctx = click.get_current_context()
    settings = ctx.obj or {}
    conventions = {
        "truncation": NOT_APPLICABLE,
        "variance_mode": NOT_APPLICABLE,
        **(conventions or {}),
    }
    config = RunConfig(command=ctx.info_name, options=dict(ctx.params), seed=seed)

    if settings.get("as_json"):
        document = OutputDocument(
            version=TOOL_VERSION,
            seed=seed,
            method=method,
            conventions=conventions,
            payload=payload,
            config=config,
        )
        text = render_json(document) + "\n"
    else:
        title = f"# pifpaf {TOOL_VERSION} method={method}"
        header = [title if seed is None else f"{title} seed={seed}"]
        header += [f"# {key}={value}" for key, value in conventions.items()]
        body = render_csv(rows) if settings.get("as_csv") else render_table(rows) + "\n"
        text = "\n".join(header) + "\n" + body

    path = write_text(text, settings.get("output"))
    if path is None:
        click.echo(text, nl=False)
    else:
        click.echo(f"Results written to {path}")


def build_model(
    rr: Optional[float],
    rr_ci: Optional[str],
    beta: Optional[str],
    beta_se: Optional[str],
    rr_form: str,
    level: float = 0.95,
    require_uncertainty: bool = True,
) -> RelativeRiskModel:
    """Builds the relative risk model from either --rr/--rr-ci or --beta/--beta-se."""
    if rr is not None and beta is not None:
        raise click.UsageError("Use either --rr or --beta, not both.")

    if rr is not None:
        if rr_ci is not None:
            lower, upper = parse_pair(rr_ci)
            return RelativeRiskModel.from_rr_ci(rr, lower, upper, level=level, form=rr_form)
        if require_uncertainty:
            raise click.UsageError("--rr needs --rr-ci LOWER,UPPER.")
        coefficient = math.log(rr) if RiskForm(rr_form) is RiskForm.EXPONENTIAL else rr - 1.0
        return RelativeRiskModel.from_beta(coefficient, se=0.0, form=rr_form)

    if beta is not None:
        coefficients = parse_float_list(beta)
        if beta_se is None:
            if require_uncertainty:
                raise click.UsageError("--beta needs --beta-se.")
            ses = [0.0] * len(coefficients)
        else:
            ses = parse_float_list(beta_se)
        return RelativeRiskModel.from_beta(coefficients, se=ses, form=rr_form)

    if require_uncertainty:
        raise click.UsageError("Provide --rr with --rr-ci, or --beta with --beta-se.")
    return Defaults().risk_model()


def parse_distribution(text: str) -> FittedDistribution:
    """Parses ``family:p1,p2`` into a distribution."""
    family, _, params = str(text).partition(":")
    try:
        return FittedDistribution(Family(family.strip().lower()), tuple(parse_float_list(params)))
    except ValueError as error:
        if isinstance(error, InvalidSpecification):
            raise
        raise InvalidSpecification(
            f"Expected 'family:param1,param2', got '{text}'."
        ) from error


def risk_options(func):
    """Relative risk flags shared by the estimation commands."""
    options = [
        click.option("--rr", type=float, help="Relative risk per unit of exposure."),
        click.option("--rr-ci", help="Confidence bounds of --rr as LOWER,UPPER."),
        click.option("--beta", help="Coefficient(s), comma separated."),
        click.option("--beta-se", help="Standard error(s) of --beta, comma separated."),
        click.option(
            "--rr-form",
            type=click.Choice([form.value for form in RiskForm]),
            default=RiskForm.EXPONENTIAL.value,
            show_default=True,
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def estimate_options(func):
    """Exposure, level and mode flags shared by ``paf`` and ``pif``."""
    options = [
        click.option("--data", type=click.Path(dir_okay=False), help="Exposure CSV."),
        click.option("--mean", type=float, help="Exposure mean (summary path)."),
        click.option("--sd", type=float, help="Exposure standard deviation."),
        click.option("--n", "n", type=int, help="Sample size behind --mean/--sd."),
        click.option(
            "--family",
            type=FAMILIES,
            help="Parametric family: standard method with --mean/--sd, "
            "mixture method with --data.",
        ),
        click.option("--upper", type=float, help="Truncation bound M for the mixture method."),
        click.option("--level", type=float, default=0.95, show_default=True),
        click.option(
            "--mode",
            type=click.Choice([mode.value for mode in ApproxMode]),
            default=ApproxMode.TAYLOR_VARIANCE.value,
            show_default=True,
            help="Second-order expansion of the approximate method.",
        ),
        click.option("--clamp-ci", is_flag=True, help="Clamp the upper bound at 1."),
        click.option(
            "--renormalize/--no-renormalize",
            default=True,
            show_default=True,
            help="Truncation convention of the standard method.",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return risk_options(func)


def run_estimate(cft: Counterfactual, **options):
    """Dispatches to the estimator implied by the supplied flags."""
    model = build_model(
        options["rr"],
        options["rr_ci"],
        options["beta"],
        options["beta_se"],
        options["rr_form"],
        level=options["level"],
        require_uncertainty=options["family"] is None,
    )
    has_summary = options["mean"] is not None or options["sd"] is not None
    if options["data"] and has_summary:
        raise click.UsageError("Use either --data or --mean/--sd, not both.")

    conventions = {}
    if options["data"]:
        if options["family"]:
            data = read_exposure_csv(options["data"])
            if data.k != 1:
                raise click.UsageError("The mixture method needs a single exposure column.")
            dist = fit_mixture(options["family"], data.values[:, 0])
            result = mixture_estimate(
                dist.zero_mass, dist, model, upper=options["upper"], cft=cft
            )
            conventions = {"truncation": "renormalized"}
        else:
            result = empirical_estimate(
                read_exposure_csv(options["data"]),
                model,
                cft,
                level=options["level"],
                clamp_upper=options["clamp_ci"],
            )
    elif options["mean"] is not None and options["sd"] is not None:
        if options["family"]:
            result = standard_from_summary(
                options["family"],
                options["mean"],
                options["sd"] ** 2,
                model,
                cft,
                renormalize=options["renormalize"],
            )
            conventions = {
                "truncation": "renormalized" if options["renormalize"] else "unnormalized"
            }
        else:
            if options["n"] is None:
                raise click.UsageError("The approximate method needs --n.")
            result = approximate_estimate(
                SummaryStats.from_scalar(options["mean"], options["sd"], options["n"]),
                model,
                cft,
                level=options["level"],
                mode=options["mode"],
                clamp_upper=options["clamp_ci"],
            )
            conventions = {"variance_mode": options["mode"]}
    else:
        raise click.UsageError("Provide --data, or --mean and --sd.")

    emit(result, estimate_rows(result), result.method.value, conventions=conventions)


@click.group
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging.")
@click.option("--json", "as_json", is_flag=True, help="Emit a JSON document.")
@click.option("--csv", "as_csv", is_flag=True, help="Emit CSV rows.")
@click.option("--output", type=click.Path(dir_okay=False), help="Write output to a file.")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    help="Options from an .ini file or a previous --json document.",
)
@click.pass_context
def cli(ctx, verbose, as_json, as_csv, output, config_path):
    """Potential impact fraction and population attributable fraction estimation."""
    if as_json and as_csv:
        raise click.UsageError("Use either --json or --csv, not both.")
    if verbose:
        set_log_level("DEBUG")
    if SENTRY_ENABLED:
        initialize_sentry()

    ctx.ensure_object(dict)
    ctx.obj.update(as_json=as_json, as_csv=as_csv, output=output)

    if config_path:
        try:
            run_config = RunConfig.load(config_path)
        except InputError as error:
            raise click.UsageError(str(error)) from error
        ctx.default_map = {run_config.command: run_config.options}
        logger.info("Loaded options for '%s' from %s", run_config.command, config_path)


@cli.command
@estimate_options
@handle_errors
def paf(**options):
    """Estimate the population attributable fraction."""
    run_estimate(Counterfactual.zero(), **options)


@cli.command
@estimate_options
@click.option(
    "--cft",
    required=True,
    help="Counterfactual: zero, identity, scale:<a> or shift:<d>, optionally ':clamp'.",
)
@handle_errors
def pif(cft, **options):
    """Estimate the potential impact fraction of a counterfactual."""
    run_estimate(Counterfactual.parse(cft), **options)


@cli.command
@click.option("--data", type=click.Path(dir_okay=False), required=True)
@click.option("--family", type=FAMILIES, required=True)
@click.option("--method", type=click.Choice(["mom", "mle"]), default="mle", show_default=True)
@click.option("--split-zeros", "separate_zeros", is_flag=True, help="Fit positives and report p0.")
@click.option("--grid-points", type=click.IntRange(min=2), default=101, show_default=True)
@handle_errors
def fit(data, family, method, separate_zeros, grid_points):
    """Fit a parametric exposure family to data."""
    sample = read_exposure_csv(data)
    if sample.k != 1:
        raise click.UsageError("Fitting needs a single exposure column.")
    values = sample.values[:, 0]

    p0 = 0.0
    if separate_zeros:
        p0, values = split_zeros(values)

    if method == "mom":
        dist = fit_moments(family, float(np.mean(values)), float(np.var(values)))
    else:
        dist = fit_mle(family, values)

    lower = 0.0 if dist.family is not Family.NORMAL else float(min(0.0, values.min()))
    grid = np.linspace(lower, float(values.max()), grid_points)
    curve = density_curve(dist, grid)

    report = FitReport(
        family=dist.family.value,
        method=method,
        parameters=dist.parameters,
        zero_mass=p0,
        n=int(values.size),
        mean=parent_mean(dist),
        variance=parent_var(dist),
        log_likelihood=log_likelihood(dist, values),
        density=[DensityPoint(x=x, density=y) for x, y in curve.itertuples(index=False)],
    )

    settings = click.get_current_context().obj or {}
    if settings.get("as_json") or settings.get("as_csv"):
        rows = curve
    else:
        rows = [
            {"parameter": name, "value": value}
            for name, value in {**report.parameters, "p0": p0}.items()
        ]
        rows.append({"parameter": "log_likelihood", "value": report.log_likelihood})
    emit(report, rows, method, conventions={"family": dist.family.value})


@cli.command
@click.option("--family", type=FAMILIES)
@click.option("--params", help="Family parameters, comma separated.")
@click.option("--p0", type=click.FloatRange(0.0, 1.0), default=0.0, show_default=True)
@click.option("--n", "n", type=int)
@click.option("--B", "replications", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--upper", type=float, default=12.0, show_default=True)
@click.option("--cft", default="zero", show_default=True)
@click.option("--threads", type=click.IntRange(min=1))
@click.option("--progress", is_flag=True, help="Show a progress bar.")
@click.option(
    "--approx-mode",
    type=click.Choice([mode.value for mode in ApproxMode]),
    default=ApproxMode.TAYLOR_VARIANCE.value,
    show_default=True,
)
@click.option("--suite", is_flag=True, help="Run the full family x p0 x n grid.")
@handle_errors
def simulate(
    family, params, p0, n, replications, seed, upper, cft, threads, progress, approx_mode, suite
):
    """Run the Monte Carlo coverage study."""
    defaults = Defaults()
    if suite:
        scenarios = default_suite(
            defaults, replications=replications, seed=seed, approx_mode=approx_mode
        )
    else:
        if family is None or n is None:
            raise click.UsageError("simulate needs --family and --n (or --suite).")
        parameters = (
            parse_float_list(params)
            if params
            else defaults.get_floats(f"scenario.{family}", "params")
        )
        model = defaults.risk_model()
        scenarios = [
            Scenario(
                family=family,
                params=tuple(parameters),
                p0=p0,
                n=n,
                replications=replications,
                beta0=float(model.beta[0]),
                beta_se=defaults.get_float("simulation", "beta_se"),
                reference_n=defaults.get_int("simulation", "reference_n"),
                upper=upper,
                seed=seed,
                cft=Counterfactual.parse(cft),
                approx_mode=approx_mode,
            )
        ]

    reports = run_suite(scenarios, threads=threads, progress=progress)
    emit(
        reports,
        scenario_rows(reports),
        "simulation",
        seed=seed,
        conventions={"truncation": "renormalized", "variance_mode": approx_mode},
    )


@cli.command
@click.option("--family", type=FAMILIES)
@click.option("--logmu", type=float)
@click.option("--logsigma", type=float)
@click.option("--params", help="Family parameters, comma separated.")
@click.option("--p0", type=click.FloatRange(0.0, 1.0))
@risk_options
@click.option("--m-grid", help="Truncation bounds as start:stop:step.")
@click.option("--cft", "cfts", multiple=True, help="Counterfactual (repeatable).")
@handle_errors
def curve(family, logmu, logsigma, params, p0, rr, rr_ci, beta, beta_se, rr_form, m_grid, cfts):
    """Tabulate PAF/PIF against the truncation bound M."""
    defaults = Defaults()
    if logmu is not None or logsigma is not None:
        if logmu is None or logsigma is None:
            raise click.UsageError("--logmu and --logsigma go together.")
        family = family or Family.LOGNORMAL.value
        if Family(family) is not Family.LOGNORMAL:
            raise click.UsageError("--logmu/--logsigma describe a lognormal family.")
        parameters = (logmu, logsigma)
    elif params:
        if family is None:
            raise click.UsageError("--params needs --family.")
        parameters = tuple(parse_float_list(params))
    else:
        family = family or defaults.get("curve", "family")
        parameters = tuple(defaults.get_floats("curve", "params"))

    zero_mass = defaults.get_float("curve", "p0") if p0 is None else p0
    dist = FittedDistribution(family, parameters, zero_mass=zero_mass)
    model = build_model(rr, rr_ci, beta, beta_se, rr_form, require_uncertainty=False)
    counterfactuals = [
        Counterfactual.parse(text)
        for text in (cfts or defaults.get_names("curve", "counterfactuals"))
    ]
    grid = parse_grid(m_grid or defaults.get("curve", "m_grid"))

    points = truncation_curve(dist, model, counterfactuals, grid)
    emit(
        points,
        [point.model_dump(mode="json") for point in points],
        "mixture",
        conventions={"truncation": "renormalized", "distribution": dist.describe()},
    )


@cli.command
@click.option("--defaults", "use_defaults", is_flag=True, help="Use the reference grid.")
@click.option("--true", "true_specs", multiple=True, help="True distribution family:p1,p2.")
@click.option("--assumed", multiple=True, type=FAMILIES, help="Assumed family (repeatable).")
@risk_options
@click.option(
    "--convention",
    type=click.Choice(["renormalized", "unnormalized", "both"]),
    default="both",
    show_default=True,
)
@handle_errors
def biasgrid(use_defaults, true_specs, assumed, rr, rr_ci, beta, beta_se, rr_form, convention):
    """Relative bias of the standard method under wrong family assumptions."""
    defaults = Defaults()
    if true_specs and use_defaults:
        raise click.UsageError("Use either --defaults or --true.")
    truths = (
        [parse_distribution(text) for text in true_specs]
        if true_specs
        else defaults.distributions("biasgrid", "true")
    )
    families = list(assumed) or defaults.get_names("biasgrid", "assumed")
    model = build_model(rr, rr_ci, beta, beta_se, rr_form, require_uncertainty=False)

    conventions = {"both": [True, False], "renormalized": [True], "unnormalized": [False]}
    rows = []
    for renormalize in conventions[convention]:
        rows.extend(bias_grid(truths, families, model, renormalize=renormalize))

    emit(
        rows,
        [row.model_dump(mode="json") for row in rows],
        "standard",
        conventions={"truncation": convention},
    )


if __name__ == "__main__":
    cli()
