"""Exact-stratified optimal matching on a rank-based Mahalanobis distance.

Each case receives ``k`` referents from its own exact-match stratum.
Within a stratum the referents are chosen to minimise the total distance,
solved as a rectangular assignment problem in which every case appears
``k`` times.
"""

from __future__ import annotations

import csv
import io
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .errors import DataError, InfeasibleStratum, ParameterError

__all__ = [
    "CovariateTable",
    "DistanceMatrix",
    "MatchResult",
    "SingularCovarianceWarning",
    "ConstantColumnWarning",
    "InfeasibleStratumWarning",
    "robust_mahalanobis",
    "assign",
    "optimal_match",
    "balance_table",
    "write_matches_csv",
]


class SingularCovarianceWarning(UserWarning):
    """Rank covariance is singular; a pseudo-inverse was used."""


class ConstantColumnWarning(UserWarning):
    """A covariate is constant and was dropped from the distance."""


class InfeasibleStratumWarning(UserWarning):
    """A stratum has too few referents; its cases are left unmatched."""


CASE_LABELS = {"case", "1", "true", "broad_case"}
REFERENT_LABELS = {"referent", "0", "false", "control"}


def _group_flags(values) -> np.ndarray:
    out = []
    for v in values:
        s = str(v).strip().lower()
        if s in CASE_LABELS:
            out.append(True)
        elif s in REFERENT_LABELS:
            out.append(False)
        else:
            raise DataError(f"group must be 'case' or 'referent', got {v!r}")
    return np.array(out, dtype=bool)


class CovariateTable:
    """Subjects with group labels, exact-match keys and covariates.

    Parameters
    ----------
    frame : DataFrame
        One row per subject.
    id_col, group_col : str
        Subject id column (unique) and case/referent label column.
    exact_keys : sequence of str
        Categorical columns that must agree within a matched set.
    covariates : sequence of str, optional
        Columns entering the distance.  Non-numeric columns are expanded
        to 0/1 indicators.  Defaults to every column not named above.
    """

    def __init__(self, frame: pd.DataFrame, id_col: str = "id", group_col: str = "group",
                 exact_keys: Sequence[str] = (), covariates: Optional[Sequence[str]] = None):
        missing = [c for c in (id_col, group_col, *exact_keys) if c not in frame.columns]
        if missing:
            raise DataError(f"missing columns {missing}")
        if covariates is None:
            covariates = [c for c in frame.columns if c not in (id_col, group_col, *exact_keys)]
        covariates = list(covariates)
        missing = [c for c in covariates if c not in frame.columns]
        if missing:
            raise DataError(f"missing covariate columns {missing}")
        if not covariates:
            raise DataError("need at least one covariate")
        frame = frame.reset_index(drop=True)
        ids = frame[id_col].astype(str).to_numpy()
        if len(set(ids)) != ids.size:
            raise DataError("subject ids must be unique")
        if frame[list(exact_keys)].isna().any().any():
            raise DataError("exact-match keys must be present for every subject")
        if frame[covariates].isna().any().any():
            raise DataError("covariates must not be missing")
        self.ids = ids
        self.is_case = _group_flags(frame[group_col])
        self.exact_keys = tuple(exact_keys)
        self.keys = frame[list(exact_keys)].astype(str)
        self.covariates = tuple(covariates)
        self.X = _expand(frame[covariates], drop_first=True)
        self.frame = frame

    @classmethod
    def from_csv(cls, source, **kwargs) -> "CovariateTable":
        return cls(pd.read_csv(source, dtype={kwargs.get("id_col", "id"): str}), **kwargs)

    @classmethod
    def from_case_referent(cls, cases: pd.DataFrame, referents: pd.DataFrame,
                           group_col: str = "group", **kwargs) -> "CovariateTable":
        """Stack separate case and referent frames, adding the group column."""
        frame = pd.concat([cases.assign(**{group_col: "case"}),
                           referents.assign(**{group_col: "referent"})], ignore_index=True)
        return cls(frame, group_col=group_col, **kwargs)

    @property
    def case_ids(self) -> np.ndarray:
        return self.ids[self.is_case]

    @property
    def referent_ids(self) -> np.ndarray:
        return self.ids[~self.is_case]


def _expand(df: pd.DataFrame, drop_first: bool = False) -> pd.DataFrame:
    """Numeric columns as floats; other columns as one indicator per level.

    ``drop_first`` omits the first level so the indicators are not
    collinear, as needed for a distance but not for a balance table.
    """
    parts = []
    for col in df.columns:
        s = df[col]
        if pd.api.types.is_bool_dtype(s) or pd.api.types.is_numeric_dtype(s):
            parts.append(s.astype(float).rename(col))
        else:
            dummies = pd.get_dummies(s.astype(str), prefix=col, prefix_sep="=",
                                     drop_first=drop_first).astype(float)
            parts.append(dummies)
    return pd.concat(parts, axis=1)


@dataclass(frozen=True)
class DistanceMatrix:
    """Case-by-referent distances, rows and columns labelled by subject id."""

    values: np.ndarray
    case_ids: np.ndarray
    referent_ids: np.ndarray
    singular: bool = False
    dropped: tuple = field(default=())


def _rank_precision(X: np.ndarray, names):
    """Pseudo-inverse of the tie-adjusted rank covariance, plus the ranks.

    Returns ``(ranks, precision, singular, dropped)``.
    """
    n = X.shape[0]
    if n < 2:
        raise DataError("robust Mahalanobis distance needs at least two subjects")
    constant = np.all(X == X[0], axis=0)
    dropped = tuple(name for name, c in zip(names, constant) if c)
    if dropped:
        warnings.warn(f"constant covariates dropped: {list(dropped)}", ConstantColumnWarning, stacklevel=3)
    X = X[:, ~constant]
    if X.shape[1] == 0:
        raise DataError("every covariate is constant")
    ranks = np.column_stack([rankdata(col, method="average") for col in X.T])
    cov = np.atleast_2d(np.cov(ranks, rowvar=False, ddof=1))
    untied = n * (n + 1) / 12.0  # sample variance of 1..n
    scale = np.sqrt(untied / np.diag(cov))
    cov = cov * np.outer(scale, scale)
    singular = np.linalg.matrix_rank(cov) < cov.shape[0]
    if singular:
        warnings.warn("rank covariance is singular; using a pseudo-inverse",
                      SingularCovarianceWarning, stacklevel=3)
    return ranks, np.linalg.pinv(cov, hermitian=True), bool(singular), dropped


def robust_mahalanobis(table: CovariateTable) -> DistanceMatrix:
    """Rank-based Mahalanobis distances between every case and referent.

    Each covariate is replaced by its average ranks over all subjects.  The
    rank covariance is rescaled so its diagonal equals the variance of the
    untied ranks 1..n, keeping heavily tied columns (such as indicators)
    from dominating.  The distance is the quadratic form of the rank
    difference in the inverse of that matrix.
    """
    ranks, prec, singular, dropped = _rank_precision(table.X.to_numpy(), list(table.X.columns))
    a = ranks[table.is_case]
    b = ranks[~table.is_case]
    qa = np.einsum("ij,jk,ik->i", a, prec, a)
    qb = np.einsum("ij,jk,ik->i", b, prec, b)
    d = qa[:, None] + qb[None, :] - 2.0 * a @ prec @ b.T
    np.maximum(d, 0.0, out=d)
    return DistanceMatrix(d, table.case_ids, table.referent_ids, singular, dropped)


def assign(cost: np.ndarray, k: int = 1):
    """Minimum-cost choice of ``k`` distinct columns per row.

    Returns ``(picks, total)`` where ``picks[i]`` lists the column indices
    given to row ``i`` in increasing cost order.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ParameterError("cost must be a 2-d array")
    if int(k) != k or k < 1:
        raise ParameterError(f"k must be a positive integer, got {k}")
    n_rows, n_cols = cost.shape
    if n_cols < k * n_rows:
        raise ParameterError(f"need {k * n_rows} columns, have {n_cols}")
    rows, cols = linear_sum_assignment(np.repeat(cost, k, axis=0))
    picks = [[] for _ in range(n_rows)]
    for r, c in zip(rows, cols):
        picks[r // k].append(int(c))
    picks = [sorted(p, key=lambda c, i=i: (cost[i, c], c)) for i, p in enumerate(picks)]
    return picks, float(cost[rows // k, cols].sum())


@dataclass(frozen=True)
class MatchResult:
    """Matched sets keyed by case id, in case-id order."""

    sets: dict
    total_distance: float
    unmatched_cases: list
    k: int = 1


def optimal_match(table: CovariateTable, k: int = 1, exact_keys: Optional[Sequence[str]] = None,
                  distance: Optional[DistanceMatrix] = None, strict: bool = False) -> MatchResult:
    """Optimal 1-to-``k`` matching within exact-match strata.

    A stratum whose referents number fewer than ``k`` times its cases is
    not matched at all; its cases are listed in ``unmatched_cases`` and an
    ``InfeasibleStratumWarning`` is issued, or ``InfeasibleStratum`` is
    raised when ``strict`` is true.
    """
    if int(k) != k or k < 1:
        raise ParameterError(f"k must be a positive integer, got {k}")
    keys = table.exact_keys if exact_keys is None else tuple(exact_keys)
    missing = [c for c in keys if c not in table.frame.columns]
    if missing:
        raise DataError(f"missing exact-match columns {missing}")
    if not table.is_case.any():
        raise DataError("no cases to match")
    dist = distance if distance is not None else robust_mahalanobis(table)
    case_pos = np.flatnonzero(table.is_case)
    ref_pos = np.flatnonzero(~table.is_case)
    stratum = (table.frame[list(keys)].astype(str).agg("\x1f".join, axis=1).to_numpy()
               if keys else np.zeros(len(table.ids), dtype=str))
    case_stratum = stratum[case_pos]
    ref_stratum = stratum[ref_pos]

    sets, unmatched, total = {}, [], 0.0
    for s in sorted(set(case_stratum)):
        ci = np.flatnonzero(case_stratum == s)
        ri = np.flatnonzero(ref_stratum == s)
        if ri.size < k * ci.size:
            msg = f"stratum {s!r}: {ci.size} cases need {k * ci.size} referents, found {ri.size}"
            if strict:
                raise InfeasibleStratum(msg)
            warnings.warn(msg, InfeasibleStratumWarning, stacklevel=2)
            unmatched.extend(dist.case_ids[ci].tolist())
            continue
        picks, cost = assign(dist.values[np.ix_(ci, ri)], k)
        total += cost
        for row, cols in zip(ci, picks):
            sets[str(dist.case_ids[row])] = [str(dist.referent_ids[ri[c]]) for c in cols]
    ordered = {c: sets[c] for c in sorted(sets, key=_id_key)}
    return MatchResult(ordered, total, sorted(map(str, unmatched), key=_id_key), int(k))


def _id_key(s):
    # numeric ids sort numerically, the rest lexically after them
    try:
        return (0, float(s), "")
    except ValueError:
        return (1, 0.0, s)


def balance_table(table: CovariateTable, result: MatchResult) -> pd.DataFrame:
    """Means and standardized mean differences in the matched sample.

    Covers the covariates and the exact-match keys, with categorical
    columns expanded to indicators.  The SMD denominator is
    ``sqrt((s_case^2 + s_ref^2) / 2)`` with sample variances.  If it is
    zero the SMD is 0 when the means agree and NaN otherwise, flagged in
    ``zero_pooled_sd``.
    """
    if not result.sets:
        raise DataError("no matched sets")
    cols = list(table.covariates) + [c for c in table.exact_keys if c not in table.covariates]
    X = _expand(table.frame[cols])
    pos = {sid: i for i, sid in enumerate(table.ids)}
    case_rows = [pos[c] for c in result.sets]
    ref_rows = [pos[r] for refs in result.sets.values() for r in refs]
    xc = X.iloc[case_rows]
    xr = X.iloc[ref_rows]
    mc, mr = xc.mean(), xr.mean()
    sd = np.sqrt((xc.var(ddof=1) + xr.var(ddof=1)) / 2.0)
    diff = mc - mr
    zero = sd == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        smd = diff / sd
    smd[zero] = np.where(diff[zero] == 0, 0.0, np.nan)
    return pd.DataFrame({
        "covariate": X.columns,
        "case_mean": mc.to_numpy(),
        "referent_mean": mr.to_numpy(),
        "smd": smd.to_numpy(),
        "zero_pooled_sd": zero.to_numpy(),
    })


def write_matches_csv(result: MatchResult, dest: Union[str, os.PathLike, io.TextIOBase]) -> None:
    """Matched sets as ``set_id, subject_id, broad_case`` rows, case first."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_matches_csv(result, fh)
        return
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(["set_id", "subject_id", "broad_case"])
    for set_id, (case, refs) in enumerate(result.sets.items(), start=1):
        w.writerow([set_id, case, 1])
        for r in refs:
            w.writerow([set_id, r, 0])
