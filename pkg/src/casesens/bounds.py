"""Sharp per-set bounds on the probability that the case is the exposed one.

Under Fisher's sharp null and a bias of at most ``gamma`` in the odds of
exposure between matched subjects, the chance that the case in a set with
``m`` exposed subjects out of ``J`` is exposed lies in

    m / (m + (J - m) * gamma)  ..  m * gamma / (m * gamma + J - m).

Restricting to narrow-case sets lets treatment move always-cases into the
narrow definition; a ratio ``theta`` bounds that effect and enters the
upper limit multiplicatively with ``gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import InvalidCount, InvalidGamma, InvalidTheta

__all__ = [
    "SensitivityParams",
    "ProbBounds",
    "broad_bounds",
    "narrow_bounds",
    "lower_prob",
    "upper_prob",
    "theta_from_displacement",
    "displacement_from_theta",
    "check_gamma",
    "check_theta",
]

ThetaSense = Literal["upper_only", "symmetric"]


def check_gamma(gamma) -> float:
    gamma = float(gamma)
    if not (gamma >= 1.0) or math.isinf(gamma):
        raise InvalidGamma(f"gamma must be a finite number >= 1, got {gamma}")
    return gamma


def check_theta(theta) -> float:
    theta = float(theta)
    if not (theta >= 1.0) or math.isinf(theta):
        raise InvalidTheta(f"theta must be a finite number >= 1, got {theta}")
    return theta


@dataclass(frozen=True)
class SensitivityParams:
    """Sensitivity parameters ``(gamma, theta)``.

    ``theta_sense="upper_only"`` bounds the treated/untreated narrow-case
    risk ratio of always-cases in ``[1, theta]``; ``"symmetric"`` widens
    this to ``[1/theta, theta]``, which lowers the lower bound too.
    """

    gamma: float = 1.0
    theta: float = 1.0
    theta_sense: ThetaSense = "upper_only"

    def __post_init__(self):
        object.__setattr__(self, "gamma", check_gamma(self.gamma))
        object.__setattr__(self, "theta", check_theta(self.theta))
        if self.theta_sense not in ("upper_only", "symmetric"):
            raise InvalidTheta(f"theta_sense must be 'upper_only' or 'symmetric', got {self.theta_sense!r}")

    @property
    def gamma_upper(self) -> float:
        """Effective odds multiplier for the upper bound."""
        return self.gamma * self.theta

    @property
    def gamma_lower(self) -> float:
        """Effective odds multiplier for the lower bound."""
        return self.gamma * self.theta if self.theta_sense == "symmetric" else self.gamma


@dataclass(frozen=True)
class ProbBounds:
    lower: float
    upper: float


def lower_prob(m, J, gamma):
    """Vectorised lower bound ``m / (m + (J - m) gamma)``."""
    m = np.asarray(m, dtype=float)
    J = np.asarray(J, dtype=float)
    return m / (m + (J - m) * gamma)


def upper_prob(m, J, gamma):
    """Vectorised upper bound ``m gamma / (m gamma + J - m)``."""
    m = np.asarray(m, dtype=float)
    J = np.asarray(J, dtype=float)
    return m * gamma / (m * gamma + (J - m))


def _check_counts(m, J):
    if int(J) != J or int(m) != m:
        raise InvalidCount(f"m and J must be integers, got m={m}, J={J}")
    if J < 2:
        raise InvalidCount(f"J must be >= 2, got {J}")
    if not 0 <= m <= J:
        raise InvalidCount(f"m must lie in [0, J], got m={m}, J={J}")


def broad_bounds(m: int, J: int, gamma: float) -> ProbBounds:
    """Bounds on Pr(case exposed) for a broad-case set."""
    _check_counts(m, J)
    gamma = check_gamma(gamma)
    return ProbBounds(float(lower_prob(m, J, gamma)), float(upper_prob(m, J, gamma)))


def narrow_bounds(m: int, J: int, params: SensitivityParams) -> ProbBounds:
    """Bounds on Pr(case exposed | case is narrow).

    The upper bound replaces ``gamma`` with ``theta * gamma``; so does the
    lower bound when ``params.theta_sense == "symmetric"``.
    """
    _check_counts(m, J)
    return ProbBounds(float(lower_prob(m, J, params.gamma_lower)),
                      float(upper_prob(m, J, params.gamma_upper)))


def theta_from_displacement(fraction: float) -> float:
    """Theta allowing up to ``fraction`` of at-home always-cases to be displaced.

    Inverse of :func:`displacement_from_theta`.
    """
    fraction = float(fraction)
    if not 0.0 <= fraction < 1.0:
        raise InvalidTheta(f"fraction must lie in [0, 1), got {fraction}")
    return 1.0 / (1.0 - fraction)


def displacement_from_theta(theta: float) -> float:
    theta = check_theta(theta)
    return 1.0 - 1.0 / theta
