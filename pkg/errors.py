"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

from typing import Optional


class PifpafError(Exception):
    """Base class for every error raised by this package."""


class InputError(PifpafError, ValueError):
    """Invalid arguments; the CLI maps these to exit code 2."""


class NumericalError(PifpafError, ArithmeticError):
    """A numerical routine could not produce a result; CLI exit code 3."""


class DimensionMismatch(InputError):
    """Exposure, coefficient or transform dimensions disagree."""


class NonPositiveRisk(InputError):
    """A linear relative risk evaluated to a value <= 0."""


class InfeasibleMoments(InputError):
    """No parameter vector reproduces the requested mean and variance."""


class NonPositiveData(InputError):
    """Positive-support fitting received zero or negative observations."""


class DegenerateSample(InputError):
    """Too few observations, or observations without spread."""


class InvalidPmf(InputError):
    """Probabilities are negative or do not sum to one."""


class UnsupportedMode(InputError):
    """The requested estimator mode does not apply to the inputs."""


class DomainError(InputError):
    """Argument outside the domain of a special function."""


class InvalidScenario(InputError):
    """A simulation scenario violates its invariants."""


class InvalidSpecification(InputError):
    """A textual specification (CLI flag, CSV cell, config entry) is malformed."""


class NonDifferentiableAtPoint(NumericalError):
    """A clamped counterfactual was differentiated at its kink."""


class NonDifferentiableCounterfactual(NonDifferentiableAtPoint):
    """The approximate method needs a twice-differentiable counterfactual."""


class QuadratureFailure(NumericalError):
    """Adaptive quadrature ran out of subdivisions before converging."""

    def __init__(
        self,
        message: str,
        value: float = float("nan"),
        error_estimate: float = float("inf"),
        subdivisions: int = 0,
    ):
        super().__init__(message)
        self.value = value
        self.error_estimate = error_estimate
        self.subdivisions = subdivisions


class OptimizerDiverged(NumericalError):
    """BFGS hit its iteration cap or produced non-finite values."""

    def __init__(self, message: str, last_iterate=None, iterations: Optional[int] = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations
