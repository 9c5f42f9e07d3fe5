"""Power of sensitivity analysis and design sensitivity under the favorable model.

In the favorable model every subject is exposed with probability ``pi``;
exposure raises the broad-case probability from ``b_C`` to ``b_T``, and a
broad case is narrow with probability ``eta_T`` if exposed and ``eta_C``
otherwise.  There is a treatment effect and no unmeasured bias.  Matched
sets are then formed from one broad case and ``J - 1`` referents.

Formula powers use the large-sample normal rejection rule.  The needed
moments of the per-set upper bound are exact sums over the conditional
distribution of the number of exposed subjects in a set.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from math import comb
from typing import Literal, Optional

import numpy as np
from scipy.optimize import bisect
from scipy.stats import norm

from .bounds import check_gamma, check_theta, upper_prob
from .errors import NotBracketed, ParameterError, Unattainable

__all__ = [
    "FavorableModel",
    "PowerSpec",
    "pmf_m_broad",
    "pmf_m_narrow",
    "pmf_m",
    "case_exposure_prob",
    "referent_exposure_prob",
    "narrow_fraction",
    "upper_bound_moments",
    "power_broad",
    "power_narrow",
    "expected_narrow_sets",
    "design_sensitivity",
    "design_sensitivity_numeric",
    "required_sets",
    "favorable_condition_check",
]

Definition = Literal["broad", "narrow"]

MAX_J = 30


def _open_unit(name, v):
    if v is None:
        return None
    v = float(v)
    if not 0.0 < v < 1.0:
        raise ParameterError(f"{name} must lie strictly between 0 and 1, got {v}")
    return v


@dataclass(frozen=True)
class FavorableModel:
    """Data-generating parameters of the favorable situation.

    ``eta_T`` and ``eta_C`` may be omitted when only broad-case quantities
    are needed.
    """

    pi: float
    b_T: float
    b_C: float
    eta_T: Optional[float] = None
    eta_C: Optional[float] = None
    J: int = 6

    def __post_init__(self):
        for name in ("pi", "b_T", "b_C", "eta_T", "eta_C"):
            object.__setattr__(self, name, _open_unit(name, getattr(self, name)))
        if (self.eta_T is None) != (self.eta_C is None):
            raise ParameterError("give both eta_T and eta_C or neither")
        if int(self.J) != self.J or not 2 <= self.J <= MAX_J:
            raise ParameterError(f"J must be an integer in [2, {MAX_J}], got {self.J}")
        object.__setattr__(self, "J", int(self.J))
        if self.b_T < self.b_C:
            warnings.warn("b_T < b_C: exposure is protective under this model", stacklevel=3)
        if self.eta_T is not None and self.eta_T < self.eta_C:
            warnings.warn("eta_T < eta_C: exposure lowers the narrow-case share", stacklevel=3)

    @property
    def has_narrow(self) -> bool:
        return self.eta_T is not None

    def require_narrow(self):
        if not self.has_narrow:
            raise ParameterError("narrow-case quantities need eta_T and eta_C")


@dataclass(frozen=True)
class PowerSpec:
    """A power query.  ``I`` may be real-valued to interpolate between sample sizes."""

    model: FavorableModel
    I: float  # noqa: E741
    gamma: float = 1.0
    theta: float = 1.0
    alpha: float = 0.05

    def __post_init__(self):
        if not self.I >= 1:
            raise ParameterError(f"I must be >= 1, got {self.I}")
        object.__setattr__(self, "gamma", check_gamma(self.gamma))
        object.__setattr__(self, "theta", check_theta(self.theta))
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")


def _weights(model: FavorableModel, definition: str):
    if definition == "broad":
        return model.b_T, model.b_C
    if definition == "narrow":
        model.require_narrow()
        return model.b_T * model.eta_T, model.b_C * model.eta_C
    raise ParameterError(f"definition must be 'broad' or 'narrow', got {definition!r}")


def pmf_m(model: FavorableModel, definition: Definition = "broad") -> np.ndarray:
    """Pr(m_i = t | set formed), t = 0..J, for the chosen case definition.

    A set's exposed count is the case's exposure plus a binomial count of
    exposed referents; the case term carries weight ``b_T`` (exposed) or
    ``b_C`` (unexposed), times ``eta_T``/``eta_C`` for narrow cases.
    """
    pi, bT, bC, J = model.pi, model.b_T, model.b_C, model.J
    wT, wC = _weights(model, definition)
    den = (wT * pi + wC * (1 - pi)) * ((1 - bT) * pi + (1 - bC) * (1 - pi)) ** (J - 1)
    out = np.empty(J + 1)
    for t in range(J + 1):
        exposed_case = wT * comb(J - 1, t - 1) * (1 - bT) ** (t - 1) * (1 - bC) ** (J - t) if t >= 1 else 0.0
        unexposed_case = wC * comb(J - 1, t) * (1 - bT) ** t * (1 - bC) ** (J - 1 - t) if t <= J - 1 else 0.0
        out[t] = pi ** t * (1 - pi) ** (J - t) * (exposed_case + unexposed_case) / den
    return out


def _check_t(model, t):
    if int(t) != t or not 0 <= t <= model.J:
        raise ParameterError(f"t must be an integer in [0, {model.J}], got {t}")
    return int(t)


def pmf_m_broad(model: FavorableModel, t: int) -> float:
    return float(pmf_m(model, "broad")[_check_t(model, t)])


def pmf_m_narrow(model: FavorableModel, t: int) -> float:
    return float(pmf_m(model, "narrow")[_check_t(model, t)])


def case_exposure_prob(model: FavorableModel, definition: Definition = "broad") -> float:
    """Pr(case exposed) by Bayes' rule, for broad or narrow cases."""
    wT, wC = _weights(model, definition)
    return wT * model.pi / (wT * model.pi + wC * (1 - model.pi))


def referent_exposure_prob(model: FavorableModel) -> float:
    pi, bT, bC = model.pi, model.b_T, model.b_C
    return (1 - bT) * pi / ((1 - bT) * pi + (1 - bC) * (1 - pi))


def narrow_fraction(model: FavorableModel) -> float:
    """Expected share ``q`` of broad cases that are narrow."""
    model.require_narrow()
    pi, bT, bC = model.pi, model.b_T, model.b_C
    return (model.eta_T * bT * pi + model.eta_C * bC * (1 - pi)) / (bT * pi + bC * (1 - pi))


def expected_narrow_sets(model: FavorableModel, I: float) -> float:  # noqa: E741
    return narrow_fraction(model) * I


def upper_bound_moments(model: FavorableModel, gamma_eff: float, definition: Definition = "broad"):
    """E(pbar) and E{pbar (1 - pbar)} for the per-set upper bound at ``gamma_eff``."""
    pmf = pmf_m(model, definition)
    t = np.arange(model.J + 1)
    up = upper_prob(t, model.J, gamma_eff)
    return float(pmf @ up), float(pmf @ (up * (1 - up)))


def _z(p, n_eff, mean_up, var_up, alpha):
    return (math.sqrt(n_eff) * (p - mean_up) - norm.ppf(1 - alpha) * math.sqrt(var_up)) / math.sqrt(p * (1 - p))


def power_broad(spec: PowerSpec) -> float:
    """Approximate power of the broad-case sensitivity analysis at ``spec.gamma``."""
    p = case_exposure_prob(spec.model, "broad")
    mean_up, var_up = upper_bound_moments(spec.model, spec.gamma, "broad")
    return float(norm.cdf(_z(p, spec.I, mean_up, var_up, spec.alpha)))


def power_narrow(spec: PowerSpec) -> float:
    """Approximate power of the narrow-case analysis at ``(gamma, theta)``.

    The random number of narrow sets is replaced by its expectation ``q I``.
    """
    p = case_exposure_prob(spec.model, "narrow")
    mean_up, var_up = upper_bound_moments(spec.model, spec.gamma * spec.theta, "narrow")
    n_eff = narrow_fraction(spec.model) * spec.I
    return float(norm.cdf(_z(p, n_eff, mean_up, var_up, spec.alpha)))


def design_sensitivity(model: FavorableModel, theta: Optional[float] = None,
                       definition: Definition = "broad") -> float:
    """Closed-form design sensitivity.

    Broad: the odds ratio ``[b_T/(1-b_T)] / [b_C/(1-b_C)]``.  Narrow: that
    odds ratio times ``(eta_T/eta_C) / theta``.
    """
    odds = (model.b_T / (1 - model.b_T)) / (model.b_C / (1 - model.b_C))
    if definition == "broad":
        return odds
    if definition != "narrow":
        raise ParameterError(f"definition must be 'broad' or 'narrow', got {definition!r}")
    model.require_narrow()
    if theta is None:
        raise ParameterError("narrow design sensitivity needs theta")
    return odds * (model.eta_T / model.eta_C) / check_theta(theta)


def design_sensitivity_numeric(model: FavorableModel, theta: Optional[float] = None,
                               definition: Definition = "broad", upper: float = 1e3,
                               xtol: float = 1e-8) -> float:
    """Design sensitivity as the root in ``gamma`` of ``p - E(pbar)``.

    Solved by bisection on ``[1, upper]``; independent of the closed form.
    """
    if definition == "narrow":
        model.require_narrow()
        if theta is None:
            raise ParameterError("narrow design sensitivity needs theta")
        theta = check_theta(theta)
    else:
        theta = 1.0
    p = case_exposure_prob(model, definition)

    def gap(g):
        return p - upper_bound_moments(model, g * theta, definition)[0]

    lo, hi = gap(1.0), gap(upper)
    if lo < 0 or hi > 0:
        raise NotBracketed(f"no root of p - E(pbar) in [1, {upper}]", bound=upper if hi > 0 else 1.0)
    if lo == 0:
        return 1.0
    return float(bisect(gap, 1.0, upper, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500))


def _continuous_sets(model, gamma_eff, alpha, target_power, definition):
    p = case_exposure_prob(model, definition)
    mean_up, var_up = upper_bound_moments(model, gamma_eff, definition)
    gap = p - mean_up
    if gap <= 0:
        return None
    root = (norm.ppf(target_power) * math.sqrt(p * (1 - p)) + norm.ppf(1 - alpha) * math.sqrt(var_up)) / gap
    n_eff = max(root, 0.0) ** 2
    return n_eff / narrow_fraction(model) if definition == "narrow" else n_eff


def _smallest_meeting(power_at, target):
    hi = 1
    while power_at(hi) < target:
        hi *= 2
        if hi > 2 ** 40:
            raise Unattainable("power target not reached")
    lo = hi // 2
    if hi == 1:
        return 1
    # power_at(lo) < target <= power_at(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if power_at(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def required_sets(model: FavorableModel, gamma: float = 1.0, theta: Optional[float] = None,
                  alpha: float = 0.05, target_power: float = 0.8, definition: Definition = "broad",
                  rounding: Literal["nearest", "ceil"] = "nearest") -> int:
    """Number of broad-case matched sets needed to reach ``target_power``.

    ``rounding="nearest"`` rounds the real-valued solution of the power
    equation to the nearest integer, the convention behind published sample
    sizes such as 18, 559 and 3785 sets.  ``rounding="ceil"`` returns the
    smallest integer whose formula power is at least the target, found by
    exponential then binary search.

    Raises
    ------
    Unattainable
        If ``gamma`` (times ``theta`` for the narrow test) is at or beyond
        the design sensitivity, so power tends to 0 with more sets.
    """
    gamma = check_gamma(gamma)
    if not 0.0 < target_power < 1.0:
        raise ParameterError(f"target_power must lie in (0, 1), got {target_power}")
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    theta = 1.0 if theta is None else check_theta(theta)
    if definition == "broad":
        ds = design_sensitivity(model)
        gamma_eff = gamma
    else:
        ds = design_sensitivity(model, theta, "narrow")
        gamma_eff = gamma * theta
    if gamma >= ds:
        raise Unattainable(f"gamma={gamma} is not below the design sensitivity {ds:.4f}")
    n = _continuous_sets(model, gamma_eff, alpha, target_power, definition)
    if n is None:
        raise Unattainable(f"gamma={gamma} is not below the design sensitivity {ds:.4f}")
    if rounding == "nearest":
        return max(1, int(math.floor(n + 0.5)))
    if rounding != "ceil":
        raise ParameterError(f"rounding must be 'nearest' or 'ceil', got {rounding!r}")
    fn = power_broad if definition == "broad" else power_narrow
    return _smallest_meeting(lambda i: fn(PowerSpec(model, i, gamma, theta, alpha)), target_power)


def favorable_condition_check(model: FavorableModel, theta: float) -> bool:
    """True when ``eta_T / eta_C >= theta``: narrowing raises design sensitivity."""
    model.require_narrow()
    theta = check_theta(theta)
    ratio = model.eta_T / model.eta_C
    return ratio >= theta or math.isclose(ratio, theta, rel_tol=1e-12)
