"""Randomization tests with sensitivity bounds for broad, narrow and combined analyses.

The test statistic counts matched sets whose case is exposed.  Under the
null and a sensitivity model, each set contributes an independent Bernoulli
variable whose success probability is only known to lie between sharp
per-set bounds, so the null distribution is bracketed by two sums of
independent, non-identical Bernoulli variables.  Their tails are computed
exactly by convolving probability generating functions, or approximately
by a normal approximation without continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Sequence

import numpy as np
from scipy.stats import norm

from .bounds import SensitivityParams, check_gamma, lower_prob, upper_prob
from .errors import NoNarrowSets, ParameterError
from .study import Study

__all__ = [
    "BernoulliSum",
    "PValueBounds",
    "CombinedResult",
    "tail_ge",
    "tail_le",
    "normal_tail_bounds",
    "pvalue_bounds",
    "broad_test",
    "narrow_test",
    "combined_test",
    "bonferroni",
]

Alternative = Literal["greater", "less", "two_sided"]
Method = Literal["exact", "normal"]


def _alternative(alt: str) -> str:
    alt = alt.replace("-", "_")
    if alt not in ("greater", "less", "two_sided"):
        raise ParameterError(f"alternative must be greater, less or two_sided, got {alt!r}")
    return alt


def _method(method: str) -> str:
    if method not in ("exact", "normal"):
        raise ParameterError(f"method must be 'exact' or 'normal', got {method!r}")
    return method


class BernoulliSum:
    """Distribution of a sum of independent Bernoulli(p_i) variables.

    The pmf is built left to right, one factor ``(1 - p_i + p_i s)`` of the
    generating function at a time, so results do not depend on anything
    but the order of ``probs``.  Factors with ``p_i`` exactly 0 or 1 only
    shift the support and are applied as shifts.
    """

    def __init__(self, probs: Sequence[float]):
        p = np.asarray(probs, dtype=float).ravel()
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ParameterError("probabilities must lie in [0, 1]")
        self.probs = p

    @property
    def n(self) -> int:
        return int(self.probs.size)

    @cached_property
    def pmf(self) -> np.ndarray:
        p = self.probs
        shift = int(np.count_nonzero(p == 1.0))
        free = p[(p > 0.0) & (p < 1.0)]
        d = np.zeros(free.size + 1)
        d[0] = 1.0
        for i, pi in enumerate(free):
            moved = d[: i + 1] * pi
            d[: i + 1] *= 1.0 - pi
            d[1 : i + 2] += moved
        out = np.zeros(self.n + 1)
        out[shift : shift + d.size] = d
        return out

    @property
    def mean(self) -> float:
        return float(self.probs.sum())

    @property
    def var(self) -> float:
        return float((self.probs * (1.0 - self.probs)).sum())

    def tail_ge(self, k) -> float:
        """Pr(sum >= k); 1 for ``k <= 0`` and 0 for ``k > n``."""
        k = math.ceil(k)
        if k <= 0:
            return 1.0
        if k > self.n:
            return 0.0
        return float(min(1.0, max(0.0, self.pmf[k:].sum())))

    def tail_le(self, k) -> float:
        """Pr(sum <= k); 0 for ``k < 0`` and 1 for ``k >= n``."""
        k = math.floor(k)
        if k < 0:
            return 0.0
        if k >= self.n:
            return 1.0
        return float(min(1.0, max(0.0, self.pmf[: k + 1].sum())))


def tail_ge(dist, k) -> float:
    """Exact Pr(sum >= k) for a :class:`BernoulliSum` or a sequence of probabilities."""
    if not isinstance(dist, BernoulliSum):
        dist = BernoulliSum(dist)
    return dist.tail_ge(k)


def tail_le(dist, k) -> float:
    if not isinstance(dist, BernoulliSum):
        dist = BernoulliSum(dist)
    return dist.tail_le(k)


@dataclass(frozen=True)
class PValueBounds:
    """Sharp lower and upper bounds on a one- or two-sided p-value."""

    lower: float
    upper: float
    statistic: int
    n_sets_used: int
    method: str
    alternative: str = "greater"
    notes: tuple = field(default=())


@dataclass(frozen=True)
class CombinedResult:
    p_broad_upper: float
    p_narrow_upper: float
    bonferroni_p: float
    broad: PValueBounds
    narrow: PValueBounds


def _normal_ge(probs, k):
    """Return (Pr(Y >= k) approx, zero_variance flag)."""
    mu = float(np.sum(probs))
    var = float(np.sum(probs * (1.0 - probs)))
    if k <= 0:
        return 1.0, False
    if k > probs.size:
        return 0.0, False
    if var <= 0.0:
        return (1.0 if mu >= k else 0.0), True
    return float(norm.sf((k - mu) / math.sqrt(var))), False


def _normal_le(probs, k):
    mu = float(np.sum(probs))
    var = float(np.sum(probs * (1.0 - probs)))
    if k < 0:
        return 0.0, False
    if k >= probs.size:
        return 1.0, False
    if var <= 0.0:
        return (1.0 if mu <= k else 0.0), True
    return float(norm.cdf((k - mu) / math.sqrt(var))), False


def _one_sided(p_low, p_up, k, alternative, method):
    """(lower, upper, zero_variance) for a one-sided alternative."""
    if alternative == "greater":
        hi, lo = p_up, p_low
        if method == "exact":
            return BernoulliSum(lo).tail_ge(k), BernoulliSum(hi).tail_ge(k), False
        a, fa = _normal_ge(lo, k)
        b, fb = _normal_ge(hi, k)
        return a, b, fa or fb
    # small probabilities make small counts likely: the upper bound of
    # Pr(Y <= k) uses the lower per-set probabilities
    if method == "exact":
        return BernoulliSum(p_up).tail_le(k), BernoulliSum(p_low).tail_le(k), False
    a, fa = _normal_le(p_up, k)
    b, fb = _normal_le(p_low, k)
    return a, b, fa or fb


def normal_tail_bounds(probs_lower, probs_upper, k, alternative: Alternative = "greater") -> PValueBounds:
    """Normal-approximation bounds on Pr(Y >= k) (or the requested alternative).

    With zero variance the sum is deterministic and the exact 0/1 tail is
    returned, flagged with a ``"zero_variance"`` note.
    """
    p_low = np.asarray(probs_lower, dtype=float).ravel()
    p_up = np.asarray(probs_upper, dtype=float).ravel()
    if p_low.size == 0 or p_low.size != p_up.size:
        raise ParameterError("need two nonempty probability sequences of equal length")
    return _assemble(p_low, p_up, int(k), _alternative(alternative), "normal")


def _assemble(p_low, p_up, k, alternative, method) -> PValueBounds:
    notes = []
    if alternative == "two_sided":
        lg, ug, f1 = _one_sided(p_low, p_up, k, "greater", method)
        ll, ul, f2 = _one_sided(p_low, p_up, k, "less", method)
        lower = min(1.0, 2.0 * min(lg, ll))
        upper = min(1.0, 2.0 * min(ug, ul))
        zero_var = f1 or f2
    else:
        lower, upper, zero_var = _one_sided(p_low, p_up, k, alternative, method)
    if zero_var:
        notes.append("zero_variance")
    # exact sums can differ from the ordering in the last ulp
    lower = min(lower, upper)
    return PValueBounds(lower=float(lower), upper=float(upper), statistic=int(k),
                        n_sets_used=int(p_low.size), method=method,
                        alternative=alternative, notes=tuple(notes))


def pvalue_bounds(m, J, y, gamma_lower: float, gamma_upper: float,
                  alternative: Alternative = "greater", method: Method = "exact") -> PValueBounds:
    """P-value bounds from per-set arrays.

    ``gamma_lower`` and ``gamma_upper`` are the odds multipliers that
    produce the lower and upper per-set probabilities.  This is the single
    code path shared by the analysis functions and the simulator.
    """
    m = np.asarray(m)
    J = np.asarray(J)
    y = np.asarray(y)
    p_low = lower_prob(m, J, gamma_lower)
    p_up = upper_prob(m, J, gamma_upper)
    return _assemble(p_low, p_up, int(y.sum()), _alternative(alternative), _method(method))


def broad_test(study: Study, gamma: float = 1.0, alternative: Alternative = "greater",
               method: Method = "exact") -> PValueBounds:
    """Mantel-Haenszel test over all matched sets with bias at most ``gamma``."""
    gamma = check_gamma(gamma)
    return pvalue_bounds(study.exposed_counts, study.sizes, study.case_exposed,
                         gamma, gamma, alternative, method)


def narrow_test(study: Study, params: SensitivityParams | None = None,
                alternative: Alternative = "greater", method: Method = "exact") -> PValueBounds:
    """Mantel-Haenszel test restricted to narrow-case sets.

    Raises
    ------
    NoNarrowSets
        If no case meets the narrow definition; the test is undefined.
    """
    params = params or SensitivityParams()
    keep = study.is_narrow.astype(bool)
    if not keep.any():
        raise NoNarrowSets("the study has no narrow-case matched sets")
    return pvalue_bounds(study.exposed_counts[keep], study.sizes[keep], study.case_exposed[keep],
                         params.gamma_lower, params.gamma_upper, alternative, method)


def bonferroni(p_broad_upper: float, p_narrow_upper: float) -> float:
    """Twice the smaller worst-case p-value, capped at 1."""
    return min(1.0, 2.0 * min(p_broad_upper, p_narrow_upper))


def combined_test(study: Study, params: SensitivityParams | None = None,
                  alternative: Alternative = "greater", method: Method = "exact") -> CombinedResult:
    """Bonferroni combination of the broad and narrow tests.

    Both worst cases are attained by the same allocation of the unmeasured
    confounder, so the combination is not conservative beyond the factor 2.
    """
    params = params or SensitivityParams()
    narrow = narrow_test(study, params, alternative, method)
    broad = broad_test(study, params.gamma, alternative, method)
    return CombinedResult(
        p_broad_upper=broad.upper,
        p_narrow_upper=narrow.upper,
        bonferroni_p=bonferroni(broad.upper, narrow.upper),
        broad=broad,
        narrow=narrow,
    )
