"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import math

import numpy as np
import pytest
from click.testing import CliRunner

from logutils import get_logger
from rr_models import RelativeRiskModel

logger = get_logger(__name__)

SCALE_REPLICATIONS = {"quick": 200, "desk": 1000, "full": 10000}


def pytest_addoption(parser):
    """Adds the --scale CLI argument for pytest."""
    parser.addoption(
        "--scale",
        action="store",
        default="quick",
        choices=list(SCALE_REPLICATIONS),
        help="Monte Carlo replications per coverage scenario",
    )


@pytest.fixture(scope="session")
def replications(pytestconfig):
    """Replications per simulation scenario for the selected scale."""
    scale = pytestconfig.getoption("--scale")
    logger.info("Running simulation tests at scale '%s'", scale)
    return SCALE_REPLICATIONS[scale]


@pytest.fixture
def ssb_model():
    """Exponential risk with RR 1.27 (1.16, 1.38) per unit of exposure."""
    return RelativeRiskModel.from_rr_ci(1.27, 1.16, 1.38)


@pytest.fixture
def point_model():
    """Exponential risk with beta = ln 2 and no coefficient uncertainty."""
    return RelativeRiskModel.from_beta(math.log(2.0), se=0.0)


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(20251)


@pytest.fixture
def runner(monkeypatch):
    """CLI runner with a clean output directory setting."""
    monkeypatch.delenv("PIFPAF_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("PIFPAF_DEFAULTS_FILE", raising=False)
    return CliRunner()


@pytest.fixture
def write_csv(tmp_path):
    """Factory fixture writing exposure CSV text to a temporary file."""

    def _write_csv(text, name="exposure.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    return _write_csv
