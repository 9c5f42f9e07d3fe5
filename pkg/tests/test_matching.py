import io
import itertools
import warnings

import numpy as np
import pandas as pd
import pytest

from casesens.errors import DataError, InfeasibleStratum, ParameterError
from casesens.matching import (
    ConstantColumnWarning,
    CovariateTable,
    InfeasibleStratumWarning,
    MatchResult,
    SingularCovarianceWarning,
    assign,
    balance_table,
    optimal_match,
    robust_mahalanobis,
    write_matches_csv,
)


def frame(groups, **cols):
    return pd.DataFrame({"id": [str(i) for i in range(len(groups))], "group": groups, **cols})


def brute_assign(cost, k):
    n_rows, n_cols = cost.shape
    best = np.inf
    for perm in itertools.permutations(range(n_cols), k * n_rows):
        best = min(best, sum(cost[i // k, c] for i, c in enumerate(perm)))
    return best


def test_one_dimensional_reduction():
    x = [3.0, 10.0, 1.0, 7.0, 5.0, 2.0]
    t = CovariateTable(frame(["case", "referent", "referent", "case", "referent", "referent"], x=x))
    d = robust_mahalanobis(t)
    ranks = pd.Series(x).rank().to_numpy()
    var = len(x) * (len(x) + 1) / 12
    expect = (ranks[[0, 3]][:, None] - ranks[[1, 2, 4, 5]][None, :]) ** 2 / var
    np.testing.assert_allclose(d.values, expect, atol=1e-12)
    assert not d.singular


def test_perfectly_correlated_uses_pseudo_inverse():
    x = [1.0, 4.0, 2.0, 8.0, 5.0]
    g = ["case", "referent", "case", "referent", "referent"]
    with pytest.warns(SingularCovarianceWarning):
        d2 = robust_mahalanobis(CovariateTable(frame(g, x=x, y=[2 * v + 1 for v in x])))
    d1 = robust_mahalanobis(CovariateTable(frame(g, x=x)))
    assert d2.singular
    np.testing.assert_allclose(d2.values, d1.values, atol=1e-10)


def test_tied_indicator_rescaled():
    # a binary column gets its diagonal rescaled to the untied-rank variance
    x = [0, 0, 1, 1, 1, 0]
    t = CovariateTable(frame(["case", "referent"] * 3, x=x))
    d = robust_mahalanobis(t)
    n = 6
    r = pd.Series(x).rank().to_numpy()
    # one column: d = (r_i - r_j)^2 / var(1..n) irrespective of ties
    expect = (r[[0, 2, 4]][:, None] - r[[1, 3, 5]][None, :]) ** 2 / (n * (n + 1) / 12)
    np.testing.assert_allclose(d.values, expect, atol=1e-12)


def random_table(rng, n=30, n_case=8, keys=True):
    g = ["case"] * n_case + ["referent"] * (n - n_case)
    cols = dict(age=rng.normal(50, 12, n).round(), bmi=rng.normal(25, 4, n), alone=rng.integers(0, 2, n))
    if keys:
        cols["sex"] = rng.choice(["F", "M"], n)
    return frame(g, **cols)


def test_permutation_and_scale_invariance(rng):
    df = random_table(rng)
    t = CovariateTable(df, exact_keys=["sex"], covariates=["age", "bmi", "alone"])
    d = robust_mahalanobis(t)
    perm = df.sample(frac=1.0, random_state=3)
    dp = robust_mahalanobis(CovariateTable(perm, exact_keys=["sex"], covariates=["age", "bmi", "alone"]))
    a = pd.DataFrame(d.values, index=d.case_ids, columns=d.referent_ids)
    b = pd.DataFrame(dp.values, index=dp.case_ids, columns=dp.referent_ids).loc[a.index, a.columns]
    np.testing.assert_allclose(a.to_numpy(), b.to_numpy(), atol=1e-10)
    scaled = df.assign(age=df.age * 12.5, bmi=df.bmi * 0.01)
    ds = robust_mahalanobis(CovariateTable(scaled, exact_keys=["sex"], covariates=["age", "bmi", "alone"]))
    np.testing.assert_allclose(ds.values, d.values, atol=1e-10)


def test_constant_column_dropped():
    df = frame(["case", "referent", "referent"], x=[1.0, 2.0, 3.0], c=[5.0, 5.0, 5.0])
    with pytest.warns(ConstantColumnWarning):
        d = robust_mahalanobis(CovariateTable(df))
    assert d.dropped == ("c",)
    with pytest.raises(DataError), pytest.warns(ConstantColumnWarning):
        robust_mahalanobis(CovariateTable(frame(["case", "referent"], c=[1.0, 1.0])))


def test_assign_examples():
    picks, total = assign(np.array([[5.0, 2.0, 7.0]]), 1)
    assert picks == [[1]] and total == 2.0
    picks, total = assign(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert picks == [[0], [1]] and total == 2.0
    picks, total = assign(np.array([[1.0, 2.0], [1.0, 10.0]]))
    assert total == 3.0 and picks == [[1], [0]]
    with pytest.raises(ParameterError):
        assign(np.ones((2, 3)), 2)


def test_assign_matches_exhaustive(rng):
    for _ in range(60):
        k = int(rng.integers(1, 3))
        n_rows = int(rng.integers(1, 4))
        if k * n_rows > 8 - n_rows:
            continue
        n_cols = int(rng.integers(k * n_rows, 9 - n_rows))  # at most 8 subjects
        cost = rng.random((n_rows, n_cols)).round(3)
        picks, total = assign(cost, k)
        assert total == pytest.approx(brute_assign(cost, k), abs=1e-12)
        used = [c for p in picks for c in p]
        assert len(used) == len(set(used)) == k * n_rows


def test_optimal_match_small_strata_exhaustive(rng):
    for _ in range(15):
        df = random_table(rng, n=14, n_case=4)
        t = CovariateTable(df, exact_keys=["sex"], covariates=["age", "bmi", "alone"])
        d = robust_mahalanobis(t)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", InfeasibleStratumWarning)
            res = optimal_match(t, 1, distance=d)
        expect = 0.0
        for sex in ("F", "M"):
            ci = [i for i, c in enumerate(d.case_ids) if df.set_index("id").loc[c, "sex"] == sex]
            ri = [j for j, r in enumerate(d.referent_ids) if df.set_index("id").loc[r, "sex"] == sex]
            if ci and len(ri) >= len(ci) and len(ci) + len(ri) <= 8:
                expect += brute_assign(d.values[np.ix_(ci, ri)], 1)
            elif ci and len(ri) >= len(ci):
                expect += assign(d.values[np.ix_(ci, ri)], 1)[1]
        assert res.total_distance == pytest.approx(expect, abs=1e-10)


def test_match_structure(rng):
    df = random_table(rng, n=60, n_case=10)
    t = CovariateTable(df, exact_keys=["sex"], covariates=["age", "bmi", "alone"])
    res = optimal_match(t, 2)
    sex = df.set_index("id")["sex"]
    used = [r for refs in res.sets.values() for r in refs]
    assert len(used) == len(set(used))
    for case, refs in res.sets.items():
        assert len(refs) == 2
        assert all(sex[r] == sex[case] for r in refs)
    assert list(res.sets) == sorted(res.sets, key=int)


def test_unmatched_stratum():
    df = frame(["case", "referent", "referent", "case"], x=[1.0, 2.0, 3.0, 4.0], s=["a", "a", "a", "b"])
    t = CovariateTable(df, exact_keys=["s"], covariates=["x"])
    with pytest.warns(InfeasibleStratumWarning):
        res = optimal_match(t, 1)
    assert res.unmatched_cases == ["3"]
    assert res.sets == {"0": ["1"]}
    with pytest.raises(InfeasibleStratum):
        optimal_match(t, 1, strict=True)


def test_table_validation():
    with pytest.raises(DataError):
        CovariateTable(frame(["case", "referent"], x=[1, 2]).assign(id=["a", "a"]))
    with pytest.raises(DataError):
        CovariateTable(frame(["case", "other"], x=[1, 2]))
    with pytest.raises(DataError):
        CovariateTable(frame(["case", "referent"], x=[1, None]))
    with pytest.raises(DataError):
        CovariateTable(frame(["case", "referent"]))


def test_balance_exact_key_is_zero(rng):
    df = random_table(rng, n=60, n_case=10)
    t = CovariateTable(df, exact_keys=["sex"], covariates=["age", "bmi", "alone"])
    bal = balance_table(t, optimal_match(t, 2)).set_index("covariate")
    assert bal.loc["sex=F", "smd"] == 0.0 and bal.loc["sex=M", "smd"] == 0.0


def test_balance_identical_samples():
    df = frame(["case", "case", "referent", "referent"], x=[1.0, 3.0, 1.0, 3.0], c=["u", "v", "u", "v"])
    t = CovariateTable(df)
    res = MatchResult({"0": ["2"], "1": ["3"]}, 0.0, [])
    bal = balance_table(t, res)
    assert np.all(bal["smd"] == 0.0)


def test_balance_hand_computed():
    xc = [1.0, 2.0, 4.0, 9.0]
    xr = [0.0, 2.0, 3.0, 3.0]
    df = frame(["case"] * 4 + ["referent"] * 4, x=xc + xr)
    res = MatchResult({str(i): [str(i + 4)] for i in range(4)}, 0.0, [])
    bal = balance_table(CovariateTable(df), res).set_index("covariate")
    mc, mr = 4.0, 2.0
    vc = sum((v - mc) ** 2 for v in xc) / 3
    vr = sum((v - mr) ** 2 for v in xr) / 3
    assert bal.loc["x", "smd"] == pytest.approx((mc - mr) / np.sqrt((vc + vr) / 2), abs=1e-12)
    assert bal.loc["x", "case_mean"] == mc and bal.loc["x", "referent_mean"] == mr


def test_balance_zero_pooled_sd_flag():
    df = frame(["case", "case", "referent", "referent"], x=[1.0, 1.0, 0.0, 0.0], y=[1.0, 2.0, 3.0, 4.0])
    res = MatchResult({"0": ["2"], "1": ["3"]}, 0.0, [])
    bal = balance_table(CovariateTable(df), res).set_index("covariate")
    assert np.isnan(bal.loc["x", "smd"]) and bal.loc["x", "zero_pooled_sd"]


def test_matches_csv():
    buf = io.StringIO()
    write_matches_csv(MatchResult({"7": ["1", "2"]}, 1.0, []), buf)
    assert buf.getvalue() == "set_id,subject_id,broad_case\n1,7,1\n1,1,0\n1,2,0\n"
