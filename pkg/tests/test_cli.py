"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import io
import json
import math

import pandas as pd
import pytest

from cli import EXIT_NUMERICAL, EXIT_USAGE, cli
from run_config import TOOL_VERSION, RunConfig

THREE_ROWS = "x\n0\n1\n2\n"
LN2 = "0.6931471805599453"
SSB_SUMMARY = ["--mean", "1.48", "--sd", "1.38", "--n", "7762"]
SSB_RISK = ["--rr", "1.27", "--rr-ci", "1.16,1.38"]


def _document(result):
    assert result.exit_code == 0, result.output
    return json.loads(result.output)


def test_paf_approximate_reported_sd(runner):
    """
    Test the summary-statistics path with the reported-SD expansion.
    """
    result = runner.invoke(cli, ["--json", "paf", *SSB_SUMMARY, *SSB_RISK, "--mode", "paper-sd"])
    document = _document(result)
    payload = document["payload"]
    assert payload["quantity"] == "PAF"
    assert payload["method"] == "approximate-paper-sd"
    assert payload["point"] == pytest.approx(0.325, abs=1e-3)
    assert payload["ci"][0] == pytest.approx(0.219, abs=2e-3)
    assert payload["ci"][1] == pytest.approx(0.431, abs=2e-3)
    assert document["conventions"] == {"truncation": "n/a", "variance_mode": "paper-sd"}


def test_paf_reported_sd_documented_command(runner):
    """
    Test the documented summary-statistics command line with text output.
    """
    result = runner.invoke(
        cli,
        ["paf", "--mean", "1.48", "--sd", "1.38", "--n", "7762", "--rr", "1.27",
         "--rr-ci", "1.16,1.38", "--mode", "paper-sd"],
    )
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    assert lines[0] == f"# pifpaf {TOOL_VERSION} method=approximate-paper-sd"
    assert lines[1:3] == ["# truncation=n/a", "# variance_mode=paper-sd"]
    assert "approximate-paper-sd" in lines[4]


def test_paf_empirical_json_document(runner, write_csv):
    """
    Test the empirical path and the output envelope.
    """
    path = write_csv(THREE_ROWS)
    result = runner.invoke(cli, ["--json", "paf", "--data", path, "--beta", LN2, "--beta-se", "0"])
    document = _document(result)
    assert document["tool"] == "pifpaf"
    assert document["version"] == TOOL_VERSION
    assert document["seed"] is None
    assert document["method"] == "empirical"
    assert document["payload"]["point"] == pytest.approx(4.0 / 7.0, abs=1e-12)
    assert document["payload"]["diagnostics"]["divergent"] is False
    assert document["config"]["command"] == "paf"
    assert document["config"]["options"]["data"] == path
    assert document["conventions"] == {"truncation": "n/a", "variance_mode": "n/a"}


def test_pif_zero_coefficient(runner, write_csv):
    """
    Test that a null coefficient gives no impact.
    """
    path = write_csv(THREE_ROWS)
    result = runner.invoke(
        cli,
        ["--json", "pif", "--data", path, "--beta", "0", "--beta-se", "0", "--cft", "scale:0.5"],
    )
    payload = _document(result)["payload"]
    assert payload["quantity"] == "PIF"
    assert payload["point"] == pytest.approx(0.0, abs=1e-12)


def test_paf_standard_method_flags_divergence(runner):
    """
    Test an assumed lognormal through the standard method.
    """
    result = runner.invoke(
        cli, ["--json", "paf", "--mean", "1.48", "--sd", "1.38", "--family", "lognormal", *SSB_RISK]
    )
    document = _document(result)
    assert document["payload"]["point"] == 1.0
    assert document["payload"]["diagnostics"]["divergent"] is True
    assert document["conventions"] == {"truncation": "renormalized", "variance_mode": "n/a"}


def test_paf_mixture_method_with_bound(runner, write_csv):
    """
    Test the mixture path on exposure data with a truncation bound.
    """
    path = write_csv("x\n0\n0.5\n1.2\n2.0\n0.8\n3.1\n1.7\n0\n")
    result = runner.invoke(
        cli,
        ["--json", "paf", "--data", path, "--family", "gamma", "--upper", "12", *SSB_RISK],
    )
    payload = _document(result)["payload"]
    assert payload["method"] == "mixture"
    assert 0.0 < payload["point"] < 1.0


def test_table_output(runner, write_csv):
    """
    Test the default aligned text output.
    """
    path = write_csv(THREE_ROWS)
    result = runner.invoke(cli, ["paf", "--data", path, "--beta", LN2, "--beta-se", "0"])
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    assert lines[0] == f"# pifpaf {TOOL_VERSION} method=empirical"
    assert lines[1:3] == ["# truncation=n/a", "# variance_mode=n/a"]
    assert "point" in lines[3]
    assert "0.571429" in result.output


def test_csv_output(runner, write_csv):
    """
    Test CSV rows behind comment headers.
    """
    path = write_csv(THREE_ROWS)
    result = runner.invoke(cli, ["--csv", "paf", "--data", path, "--beta", LN2, "--beta-se", "0"])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(io.StringIO(result.output), comment="#")
    assert list(frame["quantity"]) == ["PAF"]
    assert frame.loc[0, "point"] == pytest.approx(4.0 / 7.0, abs=1e-9)
    assert frame.loc[0, "ci_lower"] < frame.loc[0, "point"] < frame.loc[0, "ci_upper"]


def test_output_directory_from_environment(runner, write_csv, tmp_path, monkeypatch):
    """
    Test that relative --output paths land under PIFPAF_OUTPUT_DIR.
    """
    monkeypatch.setenv("PIFPAF_OUTPUT_DIR", str(tmp_path / "results"))
    path = write_csv(THREE_ROWS)
    result = runner.invoke(
        cli,
        ["--json", "--output", "paf.json", "paf", "--data", path, "--beta", LN2, "--beta-se", "0"],
    )
    assert result.exit_code == 0, result.output
    target = tmp_path / "results" / "paf.json"
    assert "Results written to" in result.output
    document = json.loads(target.read_text(encoding="utf-8"))
    assert document["payload"]["point"] == pytest.approx(4.0 / 7.0, abs=1e-12)


def test_config_round_trip_from_json_document(runner, write_csv, tmp_path):
    """
    Test that a --json document fed back through --config reproduces the result.
    """
    path = write_csv(THREE_ROWS)
    first = runner.invoke(
        cli, ["--json", "pif", "--data", path, "--beta", LN2, "--beta-se", "0.1", "--cft", "scale:0.5"]
    )
    document_path = tmp_path / "previous.json"
    document_path.write_text(first.output, encoding="utf-8")

    second = runner.invoke(cli, ["--json", "--config", str(document_path), "pif"])
    assert _document(second)["payload"] == _document(first)["payload"]
    assert _document(second)["config"]["options"] == _document(first)["config"]["options"]


def test_config_round_trip_from_ini(runner, write_csv, tmp_path):
    """
    Test options supplied by an .ini config file.
    """
    path = write_csv(THREE_ROWS)
    config = RunConfig(
        command="paf", options={"data": path, "beta": LN2, "beta_se": "0", "level": 0.9}
    )
    ini_path = tmp_path / "run.ini"
    ini_path.write_text(config.to_ini(), encoding="utf-8")

    result = runner.invoke(cli, ["--json", "--config", str(ini_path), "paf"])
    payload = _document(result)["payload"]
    assert payload["point"] == pytest.approx(4.0 / 7.0, abs=1e-12)
    assert payload["level"] == 0.9


def test_config_file_invalid(runner, tmp_path):
    """
    Test that a config without a command is a usage error.
    """
    ini_path = tmp_path / "broken.ini"
    ini_path.write_text("[options]\nlevel = 0.9\n", encoding="utf-8")
    result = runner.invoke(cli, ["--config", str(ini_path), "paf"])
    assert result.exit_code == EXIT_USAGE


@pytest.mark.parametrize(
    "args",
    [
        ["paf", "--rr", "1.27", "--rr-ci", "1.16,1.38"],
        ["paf", *SSB_SUMMARY, "--rr", "1.27"],
        ["paf", *SSB_SUMMARY, "--beta", "0.2"],
        ["paf", *SSB_SUMMARY, "--rr", "1.27", "--beta", "0.2", "--beta-se", "0.01"],
        ["paf", "--mean", "1.48", "--sd", "1.38", *SSB_RISK],
        ["--json", "--csv", "paf", *SSB_SUMMARY, *SSB_RISK],
        ["paf", *SSB_SUMMARY, "--rr", "1.27", "--rr-ci", "1.38,1.16"],
        ["pif", *SSB_SUMMARY, *SSB_RISK],
        ["pif", *SSB_SUMMARY, *SSB_RISK, "--cft", "halve"],
        ["paf", *SSB_SUMMARY, *SSB_RISK, "--mode", "exact"],
        ["simulate", "--family", "normal", "--n", "100"],
        ["simulate", "--seed", "1"],
    ],
)
def test_usage_errors(runner, args):
    """
    Test that missing or contradictory flags exit with code 2.
    """
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_USAGE


def test_invalid_csv_value(runner, write_csv):
    """
    Test that a non-numeric cell is an input error naming the row.
    """
    path = write_csv("x\n1.5\nabc\n")
    result = runner.invoke(cli, ["paf", "--data", path, *SSB_RISK])
    assert result.exit_code == EXIT_USAGE
    assert "Invalid value 'abc' in row 2" in result.output


def test_numerical_error_exit_code(runner):
    """
    Test that a counterfactual kink at the mean exits with code 3.
    """
    result = runner.invoke(cli, ["pif", *SSB_SUMMARY, *SSB_RISK, "--cft", "shift:-2:clamp"])
    assert result.exit_code == EXIT_NUMERICAL
    assert "Numerical error" in result.output


def test_fit_normal_mle(runner, write_csv):
    """
    Test the closed-form normal fit of {1, 2, 3}.
    """
    path = write_csv("x\n1\n2\n3\n")
    result = runner.invoke(cli, ["--json", "fit", "--data", path, "--family", "normal"])
    payload = _document(result)["payload"]
    assert payload["parameters"]["mu"] == pytest.approx(2.0)
    assert payload["parameters"]["sigma"] == pytest.approx(math.sqrt(2.0 / 3.0))
    assert payload["n"] == 3
    assert len(payload["density"]) == 101


def test_fit_moments_with_zero_split(runner, write_csv):
    """
    Test the table output of a moment fit on the positive part.
    """
    path = write_csv("x\n0\n0.5\n1.0\n1.5\n2.5\n4.0\n0\n0.8\n")
    result = runner.invoke(
        cli, ["fit", "--data", path, "--family", "gamma", "--method", "mom", "--split-zeros"]
    )
    assert result.exit_code == 0, result.output
    for name in ("shape", "scale", "p0", "log_likelihood"):
        assert name in result.output
    assert "0.25" in result.output


def test_curve_reference_bound(runner):
    """
    Test the truncation curve around M = 25.
    """
    result = runner.invoke(
        cli,
        [
            "--json",
            "curve",
            "--logmu",
            "0.05",
            "--logsigma",
            "0.98",
            "--rr",
            "1.27",
            "--m-grid",
            "20:30:5",
        ],
    )
    points = _document(result)["payload"]
    assert len(points) == 3 * 4
    paf = {point["upper"]: point["value"] for point in points if point["counterfactual"] == "zero"}
    assert sorted(paf) == [20.0, 25.0, 30.0]
    assert paf[25.0] == pytest.approx(0.50, abs=0.03)


def test_curve_normal_positive_part(runner):
    """
    Test a Normal curve without a lower bound against the mixture value.
    """
    result = runner.invoke(
        cli,
        ["--json", "curve", "--family", "normal", "--params", "1.56,1.37", "--p0", "0.05",
         "--rr", "1.27", "--m-grid", "12", "--cft", "zero"],
    )
    (point,) = _document(result)["payload"]
    assert point["value"] == pytest.approx(0.375, abs=0.002)


def test_biasgrid_defaults_diagonal(runner):
    """
    Test that the reference grid has zero bias on the diagonal.
    """
    result = runner.invoke(
        cli, ["--json", "biasgrid", "--defaults", "--convention", "renormalized"]
    )
    rows = _document(result)["payload"]
    assert len(rows) == 12
    for row in rows:
        if row["true_label"].startswith(row["assumed_family"]):
            assert abs(row["relative_bias"]) < 0.5


def test_biasgrid_custom_true_distribution(runner):
    """
    Test --true and --assumed under both conventions.
    """
    result = runner.invoke(
        cli, ["--csv", "biasgrid", "--true", "gamma:1.15,1.29", "--assumed", "normal"]
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(io.StringIO(result.output), comment="#")
    assert list(frame["convention"]) == ["renormalized", "unnormalized"]
    assert frame.loc[1, "relative_bias"] == pytest.approx(-19.8, abs=0.5)


def test_simulate_echoes_seed(runner):
    """
    Test a small seeded simulation and its report rows.
    """
    result = runner.invoke(
        cli,
        ["--json", "simulate", "--family", "normal", "--n", "200", "--B", "5", "--seed", "7", "--threads", "2"],
    )
    document = _document(result)
    assert document["seed"] == 7
    (report,) = document["payload"]
    assert report["replications"] == 5
    assert report["seed"] == 7
    assert report["parameters"] == {"mu": 1.48, "sigma": 1.38}
    assert [summary["method"] for summary in report["methods"]] == ["empirical", "approximate"]


def test_simulate_reported_sd_mode(runner):
    """
    Test the reported-SD expansion in a seeded simulation.
    """
    result = runner.invoke(
        cli,
        ["--json", "simulate", "--family", "normal", "--n", "200", "--B", "3", "--seed", "5",
         "--approx-mode", "paper-sd"],
    )
    document = _document(result)
    assert document["conventions"] == {"truncation": "renormalized", "variance_mode": "paper-sd"}
    (report,) = document["payload"]
    assert report["methods"][1]["method"] == "approximate-paper-sd"


def test_simulate_is_reproducible(runner):
    """
    Test that the same seed reproduces the CSV output.
    """
    args = ["--csv", "simulate", "--family", "weibull", "--n", "150", "--B", "4", "--seed", "3"]
    first = runner.invoke(cli, args)
    second = runner.invoke(cli, [*args, "--threads", "1"])
    assert first.exit_code == 0, first.output
    assert first.output == second.output
