"""Largest bias ``gamma`` at which each test still rejects, traced over ``theta``."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np

from .bounds import SensitivityParams, check_theta
from .errors import NoNarrowSets, NoRejectionAtOne, NotBracketed, ParameterError
from .inference import broad_test, combined_test, narrow_test
from .study import Study

__all__ = ["FrontierPoint", "gamma_star", "frontier_curve", "write_frontier_csv", "upper_pvalue"]

Test = Literal["broad", "narrow", "combined"]

GAMMA_MAX = 100.0
TOL = 1e-4


def upper_pvalue(study: Study, gamma: float, theta: float = 1.0, test: Test = "broad",
                 method: str = "exact", theta_sense: str = "upper_only",
                 alternative: str = "greater") -> float:
    """Worst-case p-value of ``test`` at ``(gamma, theta)``."""
    if test == "broad":
        return broad_test(study, gamma, alternative, method).upper
    params = SensitivityParams(gamma, theta, theta_sense)
    if test == "narrow":
        return narrow_test(study, params, alternative, method).upper
    if test == "combined":
        return combined_test(study, params, alternative, method).bonferroni_p
    raise ParameterError(f"test must be broad, narrow or combined, got {test!r}")


def gamma_star(study: Study, alpha: float = 0.05, theta: float = 1.0, test: Test = "broad",
               method: str = "exact", theta_sense: str = "upper_only", alternative: str = "greater",
               gamma_max: float = GAMMA_MAX, tol: float = TOL) -> float:
    """Largest ``gamma`` in ``[1, gamma_max]`` at which ``test`` rejects at level ``alpha``.

    The worst-case p-value is nondecreasing in ``gamma``, so the rejection
    region is an interval starting at 1.  Bisection runs a fixed number of
    halvings of ``[1, gamma_max]`` and returns the left end of the final
    bracket: the largest point of a fixed dyadic grid (spacing below
    ``tol``) at which the test still rejects.  Because every call shares
    the grid, results are comparable exactly across tests and levels.

    Raises
    ------
    NoRejectionAtOne
        The test does not reject even without bias.
    NotBracketed
        The test still rejects at ``gamma_max``; ``err.bound`` holds it.
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    theta = check_theta(theta)
    if not gamma_max > 1.0 or not tol > 0.0:
        raise ParameterError("need gamma_max > 1 and tol > 0")

    def rejects(g):
        return upper_pvalue(study, g, theta, test, method, theta_sense, alternative) <= alpha

    if not rejects(1.0):
        raise NoRejectionAtOne(f"{test} test does not reject at gamma=1 (alpha={alpha})")
    if rejects(gamma_max):
        raise NotBracketed(f"{test} test still rejects at gamma={gamma_max}", bound=gamma_max)
    lo, hi = 1.0, float(gamma_max)
    for _ in range(math.ceil(math.log2((gamma_max - 1.0) / tol))):
        mid = 0.5 * (lo + hi)
        if rejects(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class FrontierPoint:
    """Largest rejecting ``gamma`` per test at one ``theta``.

    ``nan`` marks a test that rejects nowhere (not even at gamma = 1);
    tests listed in ``censored`` still reject at the search ceiling and
    carry the ceiling as a lower bound.
    """

    theta: float
    gamma_star_broad: float
    gamma_star_narrow: float
    gamma_star_combined: float
    censored: tuple = field(default=())


def _safe_gamma_star(study, alpha, theta, test, method, theta_sense, gamma_max, tol):
    try:
        return gamma_star(study, alpha, theta, test, method, theta_sense,
                          gamma_max=gamma_max, tol=tol), False
    except NoRejectionAtOne:
        return float("nan"), False
    except NotBracketed as err:
        return float(err.bound), True


def theta_grid(theta_min: float, theta_max: float, step: float) -> np.ndarray:
    theta_min = check_theta(theta_min)
    if theta_max < theta_min or not step > 0:
        raise ParameterError("need theta_min <= theta_max and step > 0")
    n = int(math.floor((theta_max - theta_min) / step + 1e-9)) + 1
    return np.round(theta_min + step * np.arange(n), 12)


def frontier_curve(study: Study, alpha: float = 0.05, theta_min: float = 1.0, theta_max: float = 2.0,
                   step: float = 0.01, method: str = "exact", theta_sense: str = "upper_only",
                   gamma_max: float = GAMMA_MAX, tol: float = TOL, workers: int = 1) -> list[FrontierPoint]:
    """Evaluate :func:`gamma_star` for each test on a ``theta`` grid.

    The broad test does not involve ``theta`` and is solved once.
    Raises ``NoNarrowSets`` if the study has no narrow-case sets.
    """
    if study.narrow_count == 0:
        raise NoNarrowSets("frontier needs narrow-case sets")
    thetas = theta_grid(theta_min, theta_max, step)
    broad, broad_cens = _safe_gamma_star(study, alpha, 1.0, "broad", method, theta_sense, gamma_max, tol)

    def point(theta):
        nar, nc = _safe_gamma_star(study, alpha, theta, "narrow", method, theta_sense, gamma_max, tol)
        com, cc = _safe_gamma_star(study, alpha, theta, "combined", method, theta_sense, gamma_max, tol)
        censored = tuple(name for name, flag in
                         (("broad", broad_cens), ("narrow", nc), ("combined", cc)) if flag)
        return FrontierPoint(float(theta), broad, nar, com, censored)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(point, thetas))
    return [point(t) for t in thetas]


def _fmt(v):
    return "NA" if math.isnan(v) else f"{v:.4f}"


def write_frontier_csv(points, dest: Union[str, os.PathLike, io.TextIOBase]) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_frontier_csv(points, fh)
        return
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(["theta", "gamma_star_broad", "gamma_star_narrow", "gamma_star_combined"])
    for p in points:
        w.writerow([f"{p.theta:g}", _fmt(p.gamma_star_broad), _fmt(p.gamma_star_narrow),
                    _fmt(p.gamma_star_combined)])
