"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import heapq
import math
import warnings
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import special
from scipy.optimize import line_search as wolfe_line_search
from scipy.optimize import minimize_scalar

from errors import DomainError, OptimizerDiverged, QuadratureFailure
from logutils import get_logger

logger = get_logger(__name__)

DEFAULT_ABS_TOL = 1e-10
DEFAULT_REL_TOL = 1e-8
DEFAULT_MAX_SUBDIVISIONS = 200
BFGS_MAX_ITER = 500
WOLFE_C1 = 1e-4
WOLFE_C2 = 0.9

_EPS = np.finfo(float).eps
_UFLOW = np.finfo(float).tiny
FD_STEP = np.cbrt(_EPS)

# Kronrod abscissae on [0, 1] in decreasing order; odd positions carry the
# embedded 7-point Gauss rule.
_XGK = np.array(
    [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144845693013,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ]
)
_WGK = np.array(
    [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ]
)
_WG = np.array(
    [
        0.0,
        0.129484966168869693270611432679082,
        0.0,
        0.279705391489276667901467771423780,
        0.0,
        0.381830050505118944950369775488975,
        0.0,
        0.417959183673469387755102040816327,
    ]
)

NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS_WEIGHTS = np.concatenate([_WG[:-1], _WG[::-1]])


class QuadratureResult(NamedTuple):
    """Outcome of :func:`integrate_gk`."""

    value: float
    error_estimate: float
    subdivisions: int
    converged: bool


class BfgsResult(NamedTuple):
    """Outcome of :func:`maximize_bfgs`."""

    argmax: np.ndarray
    value: float
    iterations: int


def gk15(f: Callable, a: float, b: float) -> tuple:
    """
    Applies the 15-point Kronrod rule with its embedded 7-point Gauss rule.

    Args:
        f (Callable): Vectorised integrand accepting a numpy array.
        a (float): Finite lower limit.
        b (float): Finite upper limit.

    Returns:
        tuple: ``(kronrod_value, error_estimate)`` using the QUADPACK error
            heuristic.
    """
    center = 0.5 * (a + b)
    half = 0.5 * (b - a)
    values = np.asarray(f(center + half * NODES), dtype=float)

    if not np.all(np.isfinite(values)):
        raise QuadratureFailure(
            f"Integrand is not finite on [{a}, {b}].", subdivisions=1
        )

    resk = float(np.dot(KRONROD_WEIGHTS, values))
    resg = float(np.dot(GAUSS_WEIGHTS, values))
    reskh = 0.5 * resk
    resabs = abs(half) * float(np.dot(KRONROD_WEIGHTS, np.abs(values)))
    resasc = abs(half) * float(np.dot(KRONROD_WEIGHTS, np.abs(values - reskh)))

    abserr = abs((resk - resg) * half)
    if resasc != 0.0 and abserr != 0.0:
        abserr = resasc * min(1.0, (200.0 * abserr / resasc) ** 1.5)
    if resabs > _UFLOW / (50.0 * _EPS):
        abserr = max(50.0 * _EPS * resabs, abserr)

    return resk * half, abserr


def _semi_infinite(f: Callable, a: float, upward: bool) -> Callable:
    """Maps [a, +inf) (or (-inf, a]) onto t in [0, 1) via x = a +/- t/(1-t)."""

    def transformed(t):
        t = np.asarray(t, dtype=float)
        one_minus = 1.0 - t
        offset = t / one_minus
        x = a + offset if upward else a - offset
        return np.asarray(f(x), dtype=float) / (one_minus * one_minus)

    return transformed


def integrate_gk(
    f: Callable,
    a: float,
    b: float,
    abs_tol: float = DEFAULT_ABS_TOL,
    rel_tol: float = DEFAULT_REL_TOL,
    max_subdivisions: int = DEFAULT_MAX_SUBDIVISIONS,
    raise_on_failure: bool = True,
) -> QuadratureResult:
    """
    Adaptive Gauss-Kronrod (G7/K15) quadrature with bisection of the
    interval carrying the largest error estimate.

    Infinite limits are mapped onto [0, 1) with x = a + t/(1 - t); a doubly
    infinite range is split at zero.

    Args:
        f (Callable): Vectorised integrand; it must accept numpy arrays.
        a (float): Lower limit, may be ``-inf``.
        b (float): Upper limit, may be ``+inf``.
        abs_tol (float): Absolute tolerance.
        rel_tol (float): Relative tolerance.
        max_subdivisions (int): Maximum number of subintervals.
        raise_on_failure (bool): Raise instead of returning an unconverged
            result.

    Returns:
        QuadratureResult: Value, error estimate, subintervals used and the
            convergence flag.

    Raises:
        QuadratureFailure: If the budget is exhausted (and
            ``raise_on_failure``) or the integrand is not finite.
    """
    if not a < b:
        raise DomainError(f"Integration limits must satisfy a < b, got [{a}, {b}].")

    if math.isinf(a) and math.isinf(b):
        left = integrate_gk(
            f, a, 0.0, abs_tol / 2, rel_tol, max_subdivisions, raise_on_failure
        )
        right = integrate_gk(
            f, 0.0, b, abs_tol / 2, rel_tol, max_subdivisions, raise_on_failure
        )
        return QuadratureResult(
            left.value + right.value,
            left.error_estimate + right.error_estimate,
            left.subdivisions + right.subdivisions,
            left.converged and right.converged,
        )
    if math.isinf(b):
        return integrate_gk(
            _semi_infinite(f, a, upward=True),
            0.0,
            1.0,
            abs_tol,
            rel_tol,
            max_subdivisions,
            raise_on_failure,
        )
    if math.isinf(a):
        return integrate_gk(
            _semi_infinite(f, b, upward=False),
            0.0,
            1.0,
            abs_tol,
            rel_tol,
            max_subdivisions,
            raise_on_failure,
        )

    value, error = gk15(f, a, b)
    heap = [(-error, a, b, value)]

    while True:
        total = math.fsum(item[3] for item in heap)
        total_error = math.fsum(-item[0] for item in heap)
        tolerance = max(abs_tol, rel_tol * abs(total))

        if total_error <= tolerance:
            logger.debug(
                "Quadrature on [%s, %s] converged with %d subintervals.",
                a,
                b,
                len(heap),
            )
            return QuadratureResult(total, total_error, len(heap), True)

        if len(heap) >= max_subdivisions:
            break

        _, left, right, _ = heapq.heappop(heap)
        mid = 0.5 * (left + right)
        if not left < mid < right:
            break
        for lo, hi in ((left, mid), (mid, right)):
            part, part_error = gk15(f, lo, hi)
            heapq.heappush(heap, (-part_error, lo, hi, part))

    logger.error(
        "Quadrature on [%s, %s] did not converge: value=%s, error=%s, subintervals=%d",
        a,
        b,
        total,
        total_error,
        len(heap),
    )
    if raise_on_failure:
        raise QuadratureFailure(
            f"Quadrature did not reach tolerance {tolerance:.3g} "
            f"(error estimate {total_error:.3g}).",
            value=total,
            error_estimate=total_error,
            subdivisions=len(heap),
        )
    return QuadratureResult(total, total_error, len(heap), False)


def gradient_fd(
    f: Callable, x: Sequence[float], lower: Optional[Sequence[float]] = None
) -> np.ndarray:
    """
    Central finite-difference gradient with step cbrt(eps) * (1 + |x_i|).

    Coordinates whose backward step would cross ``lower`` fall back to a
    forward difference.

    Args:
        f (Callable): Scalar function of a vector.
        x (Sequence[float]): Evaluation point.
        lower (Sequence[float], optional): Per-coordinate lower bounds.

    Returns:
        np.ndarray: The gradient estimate.
    """
    x = np.array(x, dtype=float)
    grad = np.empty_like(x)
    f0 = None

    for i in range(x.size):
        step = FD_STEP * (1.0 + abs(x[i]))
        forward = x.copy()
        forward[i] += step
        if lower is not None and x[i] - step < lower[i]:
            if f0 is None:
                f0 = f(x)
            grad[i] = (f(forward) - f0) / step
            continue
        backward = x.copy()
        backward[i] -= step
        grad[i] = (f(forward) - f(backward)) / (2.0 * step)

    return grad


def maximize_bfgs(
    f: Callable,
    x0: Sequence[float],
    grad: Optional[Callable] = None,
    tol: float = 1e-6,
    max_iter: int = BFGS_MAX_ITER,
    line_search: str = "wolfe",
) -> BfgsResult:
    """
    Maximises ``f`` with the BFGS quasi-Newton method.

    Stops when ||grad f|| < tol * (1 + |f|). The default line search enforces
    the strong Wolfe conditions (c1=1e-4, c2=0.9); ``line_search="exact"``
    minimises along each direction with Brent's method instead.

    Args:
        f (Callable): Objective to maximise.
        x0 (Sequence[float]): Starting point.
        grad (Callable, optional): Gradient of ``f``. Central finite
            differences are used when omitted.
        tol (float): Relative gradient tolerance.
        max_iter (int): Iteration cap.
        line_search (str): ``"wolfe"`` or ``"exact"``.

    Returns:
        BfgsResult: The maximiser, the maximum and the iteration count.

    Raises:
        OptimizerDiverged: On the iteration cap, a failed line search or
            non-finite values.
    """
    if line_search not in ("wolfe", "exact"):
        raise DomainError(f"Unknown line search '{line_search}'.")

    def objective(x):
        value = -float(f(x))
        return value if math.isfinite(value) else math.inf

    def gradient(x):
        if grad is None:
            return -gradient_fd(f, x)
        return -np.asarray(grad(x), dtype=float)

    x = np.array(x0, dtype=float)
    fx = objective(x)
    g = gradient(x)
    identity = np.eye(x.size)
    hess_inv = identity.copy()
    # First trial step has unit length.
    previous_fx = fx + 0.5 * float(np.linalg.norm(g))

    for iteration in range(max_iter + 1):
        if not (np.isfinite(fx) and np.all(np.isfinite(g))):
            raise OptimizerDiverged(
                "Non-finite objective or gradient encountered.",
                last_iterate=x,
                iterations=iteration,
            )

        if np.linalg.norm(g) < tol * (1.0 + abs(fx)):
            logger.debug(
                "BFGS converged after %d iterations (f=%s).", iteration, -fx
            )
            return BfgsResult(x, -fx, iteration)

        if iteration == max_iter:
            break

        direction = -hess_inv @ g
        if float(g @ direction) >= 0.0:
            hess_inv = identity.copy()
            direction = -g

        if line_search == "exact":
            trial = min(1.0, 1.0 / max(float(np.linalg.norm(direction)), _EPS))
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    search = minimize_scalar(
                        lambda alpha: objective(x + alpha * direction),
                        bracket=(0.0, trial),
                        method="brent",
                        tol=1e-10,
                    )
            except (RuntimeError, ValueError) as error:
                raise OptimizerDiverged(
                    f"Exact line search failed: {error}",
                    last_iterate=x,
                    iterations=iteration,
                ) from error
            alpha = float(search.x)
            new_fx = float(search.fun)
            if new_fx > fx:
                raise OptimizerDiverged(
                    "Exact line search made no progress.",
                    last_iterate=x,
                    iterations=iteration,
                )
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                alpha, *_, new_fx, _, _ = wolfe_line_search(
                    objective,
                    gradient,
                    x,
                    direction,
                    gfk=g,
                    old_fval=fx,
                    old_old_fval=previous_fx,
                    c1=WOLFE_C1,
                    c2=WOLFE_C2,
                )
            if alpha is None:
                if np.array_equal(hess_inv, identity):
                    raise OptimizerDiverged(
                        "Line search failed to satisfy the strong Wolfe conditions.",
                        last_iterate=x,
                        iterations=iteration,
                    )
                hess_inv = identity.copy()
                continue

        step = alpha * direction
        x_new = x + step
        g_new = gradient(x_new)
        change = g_new - g
        curvature = float(change @ step)

        if curvature > 1e-12 * np.linalg.norm(step) * np.linalg.norm(change):
            if iteration == 0:
                hess_inv = identity * (curvature / float(change @ change))
            rho = 1.0 / curvature
            left = identity - rho * np.outer(step, change)
            hess_inv = left @ hess_inv @ left.T + rho * np.outer(step, step)

        previous_fx = fx
        x, fx, g = x_new, float(new_fx), g_new

    raise OptimizerDiverged(
        f"BFGS did not converge within {max_iter} iterations.",
        last_iterate=x,
        iterations=max_iter,
    )


def normal_cdf(x):
    """Standard normal CDF."""
    value = special.ndtr(x)
    return float(value) if np.ndim(value) == 0 else value


def normal_quantile(p):
    """
    Standard normal quantile function.

    Raises:
        DomainError: If any probability lies outside (0, 1).
    """
    p_array = np.asarray(p, dtype=float)
    if np.any(~((p_array > 0.0) & (p_array < 1.0))):
        raise DomainError(f"Normal quantile requires 0 < p < 1, got {p}.")
    value = special.ndtri(p_array)
    return float(value) if np.ndim(value) == 0 else value


def wald_z(level: float) -> float:
    """Two-sided critical value z_{1 - alpha/2} for a confidence level."""
    if not 0.0 < level < 1.0:
        raise DomainError(f"Confidence level must lie in (0, 1), got {level}.")
    return normal_quantile(0.5 + 0.5 * level)
