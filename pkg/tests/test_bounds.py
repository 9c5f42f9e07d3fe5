import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casesens.bounds import (
    SensitivityParams,
    broad_bounds,
    displacement_from_theta,
    narrow_bounds,
    theta_from_displacement,
)
from casesens.errors import InvalidCount, InvalidGamma, InvalidTheta


def test_broad_examples():
    b = broad_bounds(2, 6, 1.0)
    assert b.lower == pytest.approx(1 / 3, abs=1e-15) and b.upper == pytest.approx(1 / 3, abs=1e-15)
    assert broad_bounds(0, 6, 5.0) == broad_bounds(0, 6, 5.0).__class__(0.0, 0.0)
    b = broad_bounds(2, 6, 3.5)
    assert b.lower == pytest.approx(0.125, abs=1e-15)
    assert b.upper == pytest.approx(7 / 11, abs=1e-15)
    full = broad_bounds(6, 6, 3.0)
    assert (full.lower, full.upper) == (1.0, 1.0)


def test_narrow_examples():
    b = narrow_bounds(2, 6, SensitivityParams(1, 1))
    assert (b.lower, b.upper) == pytest.approx((1 / 3, 1 / 3), abs=1e-15)
    b = narrow_bounds(2, 6, SensitivityParams(1, 1.5))
    assert (b.lower, b.upper) == pytest.approx((1 / 3, 3 / 7), abs=1e-15)
    b = narrow_bounds(2, 6, SensitivityParams(2, 1.5, "symmetric"))
    assert (b.lower, b.upper) == pytest.approx((1 / 7, 0.6), abs=1e-15)


def test_errors():
    with pytest.raises(InvalidGamma):
        broad_bounds(1, 2, 0.5)
    with pytest.raises(InvalidGamma):
        SensitivityParams(math.nan)
    with pytest.raises(InvalidTheta):
        SensitivityParams(1, 0.9)
    with pytest.raises(InvalidTheta):
        SensitivityParams(1, 1, "both")
    with pytest.raises(InvalidCount):
        broad_bounds(3, 2, 1)
    with pytest.raises(InvalidCount):
        broad_bounds(0, 1, 1)


def test_displacement():
    assert theta_from_displacement(0.10) == pytest.approx(1.1111, abs=1e-4)
    assert displacement_from_theta(1.12) == pytest.approx(0.107, abs=1e-3)
    assert theta_from_displacement(0.5) == 2.0
    assert theta_from_displacement(0.0) == 1.0
    for f in np.linspace(0, 0.95, 20):
        assert displacement_from_theta(theta_from_displacement(f)) == pytest.approx(f, abs=1e-12)
    with pytest.raises(InvalidTheta):
        theta_from_displacement(1.0)


mjg = st.integers(2, 12).flatmap(
    lambda J: st.tuples(st.integers(0, J), st.just(J), st.floats(1, 20), st.floats(1, 5)))


@settings(max_examples=200, deadline=None)
@given(mjg, st.floats(0, 3))
def test_monotone_and_theta_one(args, dg):
    m, J, g, t = args
    b0 = narrow_bounds(m, J, SensitivityParams(g, t))
    b1 = narrow_bounds(m, J, SensitivityParams(g + dg, t))
    b2 = narrow_bounds(m, J, SensitivityParams(g, t + dg))
    assert 0 <= b0.lower <= b0.upper <= 1
    assert b1.upper >= b0.upper - 1e-15 and b1.lower <= b0.lower + 1e-15
    assert b2.upper >= b0.upper - 1e-15
    assert narrow_bounds(m, J, SensitivityParams(g, 1.0)) == broad_bounds(m, J, g)


def esf(w, k):
    """Elementary symmetric polynomial e_k(w) by brute-force subset sums."""
    return sum(math.prod(c) for c in itertools.combinations(w, k))


def brute_narrow(m, J, gamma, theta, sense):
    """Extremes of Pr(case exposed | narrow) over u in {0,1}^J and theta ratios.

    Subject j has exposure weight omega_j = gamma^u_j; exposure also
    multiplies the narrow-case chance by r in [r_lo, theta].  Given m
    exposed, Pr(case exposed) = r w_1 S_{m-1}(w_-1) / {r w_1 S_{m-1}(w_-1) + S_m(w_-1)}.
    """
    if m == 0:
        return 0.0, 0.0
    if m == J:
        return 1.0, 1.0
    ratios = (1.0, theta) if sense == "upper_only" else (1.0 / theta, theta)
    vals = []
    for u in itertools.product((0, 1), repeat=J):
        w = [gamma ** x for x in u]
        a = w[0] * esf(w[1:], m - 1)
        b = esf(w[1:], m)
        for r in ratios:
            vals.append(r * a / (r * a + b))
    return min(vals), max(vals)


@pytest.mark.parametrize("sense", ["upper_only", "symmetric"])
def test_narrow_bounds_match_esf_bruteforce(sense):
    rng = np.random.default_rng(11)
    for _ in range(120):
        J = int(rng.integers(2, 5))
        m = int(rng.integers(0, J + 1))
        g = float(rng.uniform(1, 6))
        t = float(rng.uniform(1, 3))
        lo, hi = brute_narrow(m, J, g, t, sense)
        b = narrow_bounds(m, J, SensitivityParams(g, t, sense))
        assert b.lower == pytest.approx(lo, abs=1e-12)
        assert b.upper == pytest.approx(hi, abs=1e-12)
