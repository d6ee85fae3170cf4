"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from errors import (
    DimensionMismatch,
    InvalidSpecification,
    NonDifferentiableAtPoint,
    NonPositiveRisk,
)
from logutils import get_logger
from numerics import wald_z

logger = get_logger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]


class RiskForm(str, Enum):
    """Functional form of the relative risk."""

    EXPONENTIAL = "exponential"
    LINEAR = "linear"


class CounterfactualKind(str, Enum):
    """Kinds of counterfactual exposure transformation."""

    ZERO = "zero"
    IDENTITY = "identity"
    SCALE = "scale"
    SHIFT = "shift"


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class RelativeRiskModel:
    """
    Relative risk RR(X; beta) with the covariance of the coefficient estimate.

    Intercepts cancel in every risk ratio and are not represented.
    """

    form: RiskForm
    beta: np.ndarray
    beta_cov: np.ndarray

    def __post_init__(self):
        form = RiskForm(self.form)
        beta = np.array(self.beta, dtype=float).reshape(-1)
        cov = np.array(self.beta_cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)

        if cov.shape != (beta.size, beta.size):
            raise DimensionMismatch(
                f"beta has {beta.size} components but beta_cov has shape {cov.shape}."
            )
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(cov))):
            raise InvalidSpecification("beta and beta_cov must be finite.")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise InvalidSpecification("beta_cov must be symmetric.")
        if beta.size and np.min(np.linalg.eigvalsh(cov)) < -1e-12 * max(
            1.0, float(np.max(np.abs(cov)))
        ):
            raise InvalidSpecification("beta_cov must be positive semi-definite.")

        object.__setattr__(self, "form", form)
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "beta_cov", _frozen(cov))

    @property
    def k(self) -> int:
        """Exposure dimension."""
        return self.beta.size

    @property
    def beta_se(self) -> np.ndarray:
        """Standard errors of the coefficients."""
        return np.sqrt(np.diag(self.beta_cov))

    def with_beta(self, beta: ArrayLike) -> "RelativeRiskModel":
        """Returns a copy with different coefficients and the same covariance."""
        return RelativeRiskModel(self.form, beta, self.beta_cov)

    @classmethod
    def from_beta(
        cls,
        beta: ArrayLike,
        se: Optional[ArrayLike] = None,
        cov: Optional[ArrayLike] = None,
        form: Union[RiskForm, str] = RiskForm.EXPONENTIAL,
    ) -> "RelativeRiskModel":
        """
        Builds a model from coefficients and either standard errors or a
        covariance matrix.

        Args:
            beta: Coefficient per exposure component.
            se: Standard errors; the covariance is diagonal.
            cov: Full covariance matrix.
            form: Relative risk form.

        Raises:
            InvalidSpecification: If both or neither of ``se`` and ``cov``
                are given, or a standard error is negative.
        """
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        if (se is None) == (cov is None):
            raise InvalidSpecification("Provide exactly one of se or cov.")
        if se is not None:
            se = np.atleast_1d(np.asarray(se, dtype=float))
            if np.any(se < 0):
                raise InvalidSpecification("Standard errors must be non-negative.")
            if se.size != beta.size:
                raise DimensionMismatch(
                    f"{beta.size} coefficients but {se.size} standard errors."
                )
            cov = np.diag(se**2)
        return cls(RiskForm(form), beta, cov)

    @classmethod
    def from_rr_ci(
        cls,
        rr: float,
        lower: float,
        upper: float,
        level: float = 0.95,
        form: Union[RiskForm, str] = RiskForm.EXPONENTIAL,
    ) -> "RelativeRiskModel":
        """
        Converts a published relative risk and its confidence interval.

        Exponential form uses beta = ln RR and SE = (ln U - ln L)/(2z);
        linear form uses beta = RR - 1 and SE = (U - L)/(2z).

        Args:
            rr (float): Point relative risk per unit of exposure.
            lower (float): Lower confidence bound.
            upper (float): Upper confidence bound.
            level (float): Confidence level of the interval.
            form: Relative risk form.

        Returns:
            RelativeRiskModel: A scalar model.

        Raises:
            InvalidSpecification: If the bounds do not bracket the point or
                are not positive for the exponential form.
        """
        form = RiskForm(form)
        if not lower <= rr <= upper:
            raise InvalidSpecification(
                f"Relative risk {rr} is not inside its interval ({lower}, {upper})."
            )
        z = wald_z(level)

        if form is RiskForm.EXPONENTIAL:
            if lower <= 0:
                raise InvalidSpecification(
                    "Exponential relative risks and their bounds must be positive."
                )
            beta = math.log(rr)
            se = (math.log(upper) - math.log(lower)) / (2.0 * z)
        else:
            beta = rr - 1.0
            se = (upper - lower) / (2.0 * z)

        logger.debug("Converted RR %s (%s, %s) to beta=%s, se=%s", rr, lower, upper, beta, se)
        return cls.from_beta(beta, se=se, form=form)


@dataclass(frozen=True, eq=False)
class Counterfactual:
    """Transformation g applied to exposure under the counterfactual scenario."""

    kind: CounterfactualKind
    factor: float = 1.0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(1))
    clamp_at_zero: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", CounterfactualKind(self.kind))
        offset = np.array(self.offset, dtype=float).reshape(-1)
        if not np.all(np.isfinite(offset)) or not math.isfinite(self.factor):
            raise InvalidSpecification("Counterfactual parameters must be finite.")
        object.__setattr__(self, "offset", _frozen(offset))
        object.__setattr__(self, "factor", float(self.factor))

    @classmethod
    def zero(cls) -> "Counterfactual":
        return cls(CounterfactualKind.ZERO)

    @classmethod
    def identity(cls) -> "Counterfactual":
        return cls(CounterfactualKind.IDENTITY)

    @classmethod
    def scale(cls, factor: float, clamp_at_zero: bool = False) -> "Counterfactual":
        return cls(CounterfactualKind.SCALE, factor=factor, clamp_at_zero=clamp_at_zero)

    @classmethod
    def shift(cls, offset: ArrayLike, clamp_at_zero: bool = False) -> "Counterfactual":
        return cls(CounterfactualKind.SHIFT, offset=offset, clamp_at_zero=clamp_at_zero)

    @classmethod
    def parse(cls, text: str) -> "Counterfactual":
        """
        Parses ``zero``, ``identity``, ``scale:<a>`` or ``shift:<d>[,<d>...]``,
        each optionally followed by ``:clamp``.

        Raises:
            InvalidSpecification: On malformed text.
        """
        parts = [part.strip() for part in str(text).strip().lower().split(":")]
        clamp = False
        if len(parts) > 1 and parts[-1] == "clamp":
            clamp = True
            parts = parts[:-1]

        try:
            match parts:
                case ["zero"]:
                    cft = cls.zero()
                case ["identity"]:
                    cft = cls.identity()
                case ["scale", factor]:
                    cft = cls.scale(float(factor))
                case ["shift", offsets]:
                    cft = cls.shift([float(value) for value in offsets.split(",")])
                case _:
                    raise InvalidSpecification(
                        f"Unknown counterfactual '{text}'. Expected zero, identity, "
                        "scale:<a> or shift:<d>, optionally followed by ':clamp'."
                    )
        except ValueError as error:
            if isinstance(error, InvalidSpecification):
                raise
            raise InvalidSpecification(
                f"Invalid number in counterfactual '{text}'."
            ) from error

        if clamp:
            cft = cls(cft.kind, cft.factor, cft.offset, clamp_at_zero=True)
        return cft

    @property
    def label(self) -> str:
        """Text form accepted by :meth:`parse`."""
        match self.kind:
            case CounterfactualKind.SCALE:
                text = f"scale:{self.factor:g}"
            case CounterfactualKind.SHIFT:
                text = "shift:" + ",".join(f"{value:g}" for value in self.offset)
            case _:
                text = self.kind.value
        return f"{text}:clamp" if self.clamp_at_zero else text

    @property
    def is_zero(self) -> bool:
        return self.kind is CounterfactualKind.ZERO

    @property
    def is_identity(self) -> bool:
        return self.kind is CounterfactualKind.IDENTITY and not self.clamp_at_zero

    @property
    def is_affine(self) -> bool:
        """True when g has no clamp, so g(x) = a*x + d everywhere."""
        return not self.clamp_at_zero or self.kind is CounterfactualKind.ZERO

    def affine_coefficients(self) -> tuple:
        """Returns ``(a, d)`` with g(x) = a*x + d for the unclamped map."""
        match self.kind:
            case CounterfactualKind.ZERO:
                return 0.0, np.zeros_like(self.offset)
            case CounterfactualKind.IDENTITY:
                return 1.0, np.zeros_like(self.offset)
            case CounterfactualKind.SCALE:
                return self.factor, np.zeros_like(self.offset)
            case CounterfactualKind.SHIFT:
                return 1.0, self.offset


def _as_matrix(model: RelativeRiskModel, x: ArrayLike) -> np.ndarray:
    """Coerces exposures into an n x k matrix for ``model``."""
    matrix = np.asarray(x, dtype=float)
    if matrix.ndim == 0:
        matrix = matrix.reshape(1, 1)
    elif matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1) if model.k == 1 else matrix.reshape(1, -1)

    if matrix.ndim != 2 or matrix.shape[1] != model.k:
        raise DimensionMismatch(
            f"Exposure has shape {np.shape(x)} but the model expects {model.k} "
            "component(s)."
        )
    return matrix


def _as_vector(model: RelativeRiskModel, x: ArrayLike) -> np.ndarray:
    vector = np.asarray(x, dtype=float).reshape(-1)
    if vector.size != model.k:
        raise DimensionMismatch(
            f"Exposure has {vector.size} component(s) but the model expects {model.k}."
        )
    return vector.reshape(1, -1)


def _linear_predictor(model: RelativeRiskModel, matrix: np.ndarray) -> np.ndarray:
    # Row-wise reduction keeps each row's value independent of the batch size.
    return (matrix * model.beta).sum(axis=1)


def rr_batch(model: RelativeRiskModel, x: ArrayLike) -> np.ndarray:
    """
    Evaluates RR(X_i; beta) for every row of an n x k exposure matrix.

    Raises:
        DimensionMismatch: If the exposure dimension differs from k.
        NonPositiveRisk: If a linear relative risk is not positive.
    """
    eta = _linear_predictor(model, _as_matrix(model, x))

    if model.form is RiskForm.EXPONENTIAL:
        return np.exp(eta)

    risk = 1.0 + eta
    if np.any(risk <= 0.0):
        logger.error("Linear relative risk is non-positive for %d row(s).", int(np.sum(risk <= 0)))
        raise NonPositiveRisk("Linear relative risk 1 + beta'x must be positive.")
    return risk


def rr_value(model: RelativeRiskModel, x: ArrayLike) -> float:
    """
    Evaluates RR(x; beta) for one exposure vector.

    Examples:
        Exponential with beta = ln 1.27 at x = 1 gives 1.27.
    """
    return float(rr_batch(model, _as_vector(model, x))[0])


def rr_grad_beta_batch(model: RelativeRiskModel, x: ArrayLike) -> np.ndarray:
    """Rows of the gradient of RR with respect to beta (n x k)."""
    matrix = _as_matrix(model, x)
    if model.form is RiskForm.EXPONENTIAL:
        return matrix * np.exp(_linear_predictor(model, matrix))[:, None]
    return matrix.copy()


def rr_grad_beta(model: RelativeRiskModel, x: ArrayLike) -> np.ndarray:
    """Gradient of RR with respect to beta: x*exp(beta'x) or x."""
    return rr_grad_beta_batch(model, _as_vector(model, x))[0]


def rr_grad_x_batch(model: RelativeRiskModel, x: ArrayLike) -> np.ndarray:
    """Rows of the gradient of RR with respect to the exposure (n x k)."""
    matrix = _as_matrix(model, x)
    if model.form is RiskForm.EXPONENTIAL:
        return np.exp(_linear_predictor(model, matrix))[:, None] * model.beta
    return np.tile(model.beta, (matrix.shape[0], 1))


def rr_grad_x(model: RelativeRiskModel, x: ArrayLike) -> np.ndarray:
    """Gradient of RR with respect to x: beta*exp(beta'x) or beta."""
    return rr_grad_x_batch(model, _as_vector(model, x))[0]


def rr_hess_x(model: RelativeRiskModel, x: ArrayLike) -> np.ndarray:
    """Hessian of RR in x: beta beta' exp(beta'x), or zero for the linear form."""
    vector = _as_vector(model, x)
    if model.form is RiskForm.LINEAR:
        return np.zeros((model.k, model.k))
    scale = float(np.exp(_linear_predictor(model, vector))[0])
    return np.outer(model.beta, model.beta) * scale


def _check_offset(cft: Counterfactual, k: int) -> None:
    if cft.kind is CounterfactualKind.SHIFT and cft.offset.size not in (1, k):
        raise DimensionMismatch(
            f"Shift has {cft.offset.size} component(s) but the exposure has {k}."
        )


def cft_apply(cft: Counterfactual, x: ArrayLike) -> np.ndarray:
    """
    Applies g to an exposure vector or an n x k matrix.

    Raises:
        DimensionMismatch: If a shift vector does not match the exposure.
    """
    values = np.asarray(x, dtype=float)
    k = values.shape[-1] if values.ndim else 1
    _check_offset(cft, k)

    match cft.kind:
        case CounterfactualKind.ZERO:
            return np.zeros_like(values)
        case CounterfactualKind.IDENTITY:
            image = values.copy()
        case CounterfactualKind.SCALE:
            image = cft.factor * values
        case CounterfactualKind.SHIFT:
            offset = cft.offset if values.ndim else cft.offset[0]
            image = values + offset

    if cft.clamp_at_zero:
        image = np.maximum(image, 0.0)
    return image


def cft_derivs(cft: Counterfactual, x: ArrayLike) -> tuple:
    """
    Jacobian and per-component Hessians of g at x.

    Returns:
        tuple: ``(jacobian, hessian)`` with shapes (k, k) and (k, k, k); the
            Hessian is zero for every supported kind.

    Raises:
        NonDifferentiableAtPoint: If a clamped transform is evaluated where
            the unclamped image has a component <= 0.
    """
    vector = np.asarray(x, dtype=float).reshape(-1)
    k = vector.size
    _check_offset(cft, k)
    slope, _ = cft.affine_coefficients()

    if cft.clamp_at_zero and cft.kind is not CounterfactualKind.ZERO:
        unclamped = Counterfactual(cft.kind, cft.factor, cft.offset)
        if np.any(cft_apply(unclamped, vector) <= 0.0):
            raise NonDifferentiableAtPoint(
                f"Counterfactual '{cft.label}' is not differentiable at {vector.tolist()}."
            )

    return slope * np.eye(k), np.zeros((k, k, k))
