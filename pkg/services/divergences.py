"""f-divergence toolkit: convex f paired with its conjugate and both derivatives."""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict

import numpy as np
from scipy.optimize import minimize_scalar

from config import settings
from services.errors import ConfigurationError, SupportError, ValidationError
from services.mdp_core import Occupancy, TableLike, as_array

logger = logging.getLogger(__name__)

Scalar = Callable[[np.ndarray], np.ndarray]

CHECK_GRID = np.round(np.arange(-5.0, 5.0 + 1e-9, 0.1), 10)
CONJUGACY_TOL = 1e-8
CONVEXITY_TOL = 1e-10
SUPPORT_TOL = 1e-14


@dataclass(frozen=True)
class DivergencePair:
    """f, f', f* and (f*)' as one coherent object."""

    name: str
    f: Scalar
    f_prime: Scalar
    f_star: Scalar
    f_star_prime: Scalar

    def __repr__(self) -> str:
        return f"DivergencePair({self.name!r})"


def _signed_power(x: np.ndarray, exponent: float) -> np.ndarray:
    return np.sign(x) * np.abs(x) ** exponent


def _conjugate_by_search(div: DivergencePair, x: float) -> float:
    """sup_y (x y - f*(y)) by dense grid search refined with bounded Brent."""
    center = float(div.f_prime(np.asarray(x)))
    width = 2.0 + abs(center)
    grid = np.linspace(center - width, center + width, 4001)
    values = x * grid - div.f_star(grid)
    best = int(np.argmax(values))
    step = grid[1] - grid[0]
    result = minimize_scalar(
        lambda y: -(x * y - float(div.f_star(np.asarray(y)))),
        bounds=(grid[best] - step, grid[best] + step),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return max(float(values[best]), -float(result.fun))


def check_pair(div: DivergencePair, grid: np.ndarray = CHECK_GRID) -> Dict[str, float]:
    """Largest conjugacy, inverse-derivative and convexity errors over ``grid``.

    :return: dict with 'conjugacy', 'inverse' and 'convexity' error magnitudes.
    """
    grid = np.asarray(grid, dtype=float)
    conjugacy = max(abs(float(div.f(np.asarray(x))) - _conjugate_by_search(div, x)) for x in grid)
    inverse = float(np.max(np.abs(div.f_star_prime(div.f_prime(grid)) - grid)))
    second_differences = np.diff(div.f(grid), 2)
    convexity = float(max(0.0, -np.min(second_differences)))
    return {"conjugacy": conjugacy, "inverse": inverse, "convexity": convexity}


def _verified(div: DivergencePair) -> DivergencePair:
    if not settings.CHECK_CONJUGATES:
        return div
    report = check_pair(div)
    if (
        report["conjugacy"] > CONJUGACY_TOL
        or report["inverse"] > CONJUGACY_TOL
        or report["convexity"] > CONVEXITY_TOL
    ):
        raise ValidationError(f"divergence pair {div.name} fails its grid checks: {report}")
    logger.debug(f"Divergence {div.name} verified on grid: {report}")
    return div


@lru_cache(maxsize=None)
def quadratic() -> DivergencePair:
    """f(x) = x^2/2, self-conjugate."""
    return _verified(
        DivergencePair(
            name="quadratic",
            f=lambda x: 0.5 * np.square(x),
            f_prime=lambda x: np.asarray(x, dtype=float),
            f_star=lambda y: 0.5 * np.square(y),
            f_star_prime=lambda y: np.asarray(y, dtype=float),
        )
    )


@lru_cache(maxsize=None)
def polynomial(p: float) -> DivergencePair:
    """f*(y) = |y|^p / p with f(x) = |x|^q / q, 1/p + 1/q = 1."""
    p = float(p)
    if not p > 1.0:
        raise ValidationError(f"polynomial divergence needs p > 1, got {p}")
    q = p / (p - 1.0)
    return _verified(
        DivergencePair(
            name=f"polynomial:{p:g}",
            f=lambda x: np.abs(x) ** q / q,
            f_prime=lambda x: _signed_power(np.asarray(x, dtype=float), q - 1.0),
            f_star=lambda y: np.abs(y) ** p / p,
            f_star_prime=lambda y: _signed_power(np.asarray(y, dtype=float), p - 1.0),
        )
    )


def parse_divergence(text: str) -> DivergencePair:
    """Rule 6: only the two explicit spellings are accepted."""
    text = (text or "").strip()
    if text == "quadratic":
        return quadratic()
    if text.startswith("polynomial:"):
        try:
            p = float(text.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigurationError(f"cannot read the exponent in '{text}'") from exc
        return polynomial(p)
    raise ConfigurationError(f"unknown divergence '{text}' (use 'quadratic' or 'polynomial:<p>')")


def is_quadratic(div: DivergencePair) -> bool:
    return div.name in {"quadratic", "polynomial:2"}


def density_ratio(d_pi: TableLike, d_D: TableLike) -> np.ndarray:
    """w = d^pi / d^D, zero where both vanish; SupportError on uncovered mass."""
    d_pi = as_array(d_pi)
    d_D = as_array(d_D)
    if d_pi.shape != d_D.shape:
        raise ValidationError("occupancies must share a shape")
    uncovered = (d_pi > SUPPORT_TOL) & (d_D <= 0)
    if np.any(uncovered):
        pair = tuple(int(i) for i in np.argwhere(uncovered)[0])
        raise SupportError(
            f"d^pi has mass {d_pi[pair]:.3e} at (s, a) = {pair} where d^D is zero", pair=pair
        )
    ratio = np.zeros_like(d_pi)
    covered = d_D > 0
    ratio[covered] = d_pi[covered] / d_D[covered]
    return ratio


def f_divergence(d_pi: Occupancy, d_D: Occupancy, div: DivergencePair) -> float:
    """sum over d^D > 0 of d^D(s,a) f(d^pi(s,a) / d^D(s,a))."""
    ratio = density_ratio(d_pi, d_D)
    d_D = as_array(d_D)
    covered = d_D > 0
    return float(np.sum(d_D[covered] * div.f(ratio[covered])))


def variational_gap(d_pi: Occupancy, d_D: Occupancy, x: TableLike, div: DivergencePair) -> float:
    """E_{d^pi}[x] - E_{d^D}[f*(x)], a lower bound on D_f."""
    density_ratio(d_pi, d_D)
    x = as_array(x)
    return float(np.sum(as_array(d_pi) * x) - np.sum(as_array(d_D) * div.f_star(x)))
