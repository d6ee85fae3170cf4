"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

from enum import Enum
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from run_config import RunConfig


class Quantity(str, Enum):
    PAF = "PAF"
    PIF = "PIF"


class Method(str, Enum):
    EMPIRICAL = "empirical"
    APPROXIMATE = "approximate"
    APPROXIMATE_PAPER_SD = "approximate-paper-sd"
    STANDARD = "standard"
    MIXTURE = "mixture"
    DISCRETE_ORACLE = "discrete-oracle"


class Diagnostics(BaseModel):
    mu_obs: Optional[float] = None
    mu_cft: Optional[float] = None
    divergent: bool = False
    notes: list[str] = Field(default_factory=list)


class EstimateResult(BaseModel):
    """Point estimate with its Wald interval; ``se`` is absent for baselines."""

    model_config = ConfigDict(frozen=True)

    quantity: Quantity
    point: float
    se: Optional[float] = None
    ci: Optional[tuple[float, float]] = None
    level: float = 0.95
    method: Method
    diagnostics: Diagnostics = Field(default_factory=Diagnostics)

    @property
    def half_width(self) -> Optional[float]:
        if self.ci is None:
            return None
        return 0.5 * (self.ci[1] - self.ci[0])

    def covers(self, value: float) -> bool:
        """True when ``value`` lies inside the interval."""
        return self.ci is not None and self.ci[0] <= value <= self.ci[1]


class DensityPoint(BaseModel):
    x: float
    density: float


class FitReport(BaseModel):
    family: str
    method: str
    parameters: dict[str, float]
    zero_mass: float = 0.0
    n: int
    mean: float
    variance: float
    log_likelihood: Optional[float] = None
    density: list[DensityPoint] = Field(default_factory=list)


class MethodSummary(BaseModel):
    method: Method
    mean_estimate: Optional[float] = None
    mean_rel_bias: Optional[float] = None
    mean_se: Optional[float] = None
    sd_of_estimates: Optional[float] = None
    coverage: Optional[float] = None
    failures: int = 0
    replications: int


class ScenarioReport(BaseModel):
    label: str
    family: str
    parameters: dict[str, float]
    p0: float
    n: int
    replications: int
    seed: int
    true_paf: float
    methods: list[MethodSummary]

    def summary(self, method: Method) -> MethodSummary:
        """Returns the summary row of ``method``."""
        for row in self.methods:
            if row.method == method:
                return row
        raise KeyError(f"No summary for method '{method.value}'.")


class BiasGridRow(BaseModel):
    true_label: str
    assumed_family: str
    convention: str
    paf_true: float
    paf_assumed: float
    divergent: bool = False
    relative_bias: float


class CurvePoint(BaseModel):
    upper: float
    counterfactual: str
    quantity: Quantity
    value: float


class OutputDocument(BaseModel):
    """Machine-readable envelope written by ``--json``."""

    tool: str = "pifpaf"
    version: str
    seed: Optional[int] = None
    method: str
    conventions: dict[str, str] = Field(default_factory=dict)
    payload: Union[
        EstimateResult,
        FitReport,
        list[ScenarioReport],
        list[BiasGridRow],
        list[CurvePoint],
    ]
    config: RunConfig
