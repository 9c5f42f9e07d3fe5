"""Matched case-referent data: parsing, validation, per-set statistics.

A matched set holds one broad case and ``J_i - 1`` referents.  Everything
downstream works with three per-set numbers: the set size ``J_i``, the
number of exposed subjects ``m_i`` and the case-exposure indicator
``Y_i``, plus the flag saying whether the case also meets the narrow
definition.
"""

from __future__ import annotations

import csv
import io
import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    BadBinary,
    DataError,
    DuplicateSubject,
    EmptyStudy,
    MissingCase,
    MultipleCases,
    NarrowReferent,
    SetTooSmall,
)

__all__ = [
    "SubjectRecord",
    "MatchedSet",
    "Study",
    "StudySummary",
    "parse_study",
    "read_study_csv",
    "write_study_csv",
    "study_to_records",
    "summarize",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("set_id", "subject_id", "exposed", "broad_case", "narrow_case")


@dataclass(frozen=True)
class SubjectRecord:
    set_id: int
    subject_id: str
    exposed: int
    broad_case: int
    narrow_case: int


@dataclass(frozen=True)
class MatchedSet:
    """Aggregate view of one matched set."""

    set_id: int
    size: int
    exposed_count: int
    case_exposed: int
    is_narrow: int


class Study:
    """An ordered collection of matched sets, stored column-wise.

    Parameters
    ----------
    set_ids, sizes, exposed_counts, case_exposed, is_narrow : array-like
        One entry per matched set.  ``sizes`` is ``J_i``, ``exposed_counts``
        is ``m_i``, ``case_exposed`` is ``Y_i`` and ``is_narrow`` marks
        membership in the narrow-case collection.
    """

    __slots__ = ("set_ids", "sizes", "exposed_counts", "case_exposed", "is_narrow")

    def __init__(self, set_ids, sizes, exposed_counts, case_exposed, is_narrow):
        set_ids = np.asarray(set_ids, dtype=np.int64).ravel()
        sizes = np.asarray(sizes, dtype=np.int64).ravel()
        m = np.asarray(exposed_counts, dtype=np.int64).ravel()
        y = np.asarray(case_exposed, dtype=np.int64).ravel()
        nar = np.asarray(is_narrow, dtype=np.int64).ravel()
        n = set_ids.size
        if n == 0:
            raise EmptyStudy("a study needs at least one matched set")
        if not (sizes.size == m.size == y.size == nar.size == n):
            raise DataError("per-set arrays must have equal length")
        if np.any(set_ids < 1):
            raise DataError("set ids must be integers >= 1")
        if np.unique(set_ids).size != n:
            raise DataError("set ids must be unique")
        if np.any(sizes < 2):
            raise SetTooSmall("every matched set needs a case and at least one referent")
        if np.any((y != 0) & (y != 1)) or np.any((nar != 0) & (nar != 1)):
            raise BadBinary("case_exposed and is_narrow must be 0 or 1")
        if np.any(m < y) or np.any(m > sizes - 1 + y):
            raise DataError("exposed counts inconsistent with case exposure and set size")
        for name, arr in (("set_ids", set_ids), ("sizes", sizes),
                          ("exposed_counts", m), ("case_exposed", y), ("is_narrow", nar)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __setattr__(self, name, value):
        raise AttributeError("Study is immutable")

    @classmethod
    def from_sets(cls, sets: Iterable[MatchedSet]) -> "Study":
        sets = list(sets)
        return cls(
            [s.set_id for s in sets],
            [s.size for s in sets],
            [s.exposed_count for s in sets],
            [s.case_exposed for s in sets],
            [s.is_narrow for s in sets],
        )

    @property
    def I(self) -> int:  # noqa: E743 - conventional name for the number of sets
        return int(self.set_ids.size)

    @property
    def narrow_count(self) -> int:
        return int(self.is_narrow.sum())

    @property
    def sets(self) -> list[MatchedSet]:
        return [
            MatchedSet(int(a), int(b), int(c), int(d), int(e))
            for a, b, c, d, e in zip(self.set_ids, self.sizes, self.exposed_counts,
                                     self.case_exposed, self.is_narrow)
        ]

    def narrow_only(self) -> "Study":
        """Sub-study of the sets whose case meets the narrow definition."""
        keep = self.is_narrow.astype(bool)
        if not keep.any():
            raise EmptyStudy("study has no narrow-case sets")
        return Study(self.set_ids[keep], self.sizes[keep], self.exposed_counts[keep],
                     self.case_exposed[keep], self.is_narrow[keep])

    def __len__(self):
        return self.I

    def __eq__(self, other):
        if not isinstance(other, Study):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in self.__slots__)

    def __repr__(self):
        return f"Study(I={self.I}, narrow_count={self.narrow_count})"


def _binary(value, field, where):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (int, np.integer)) and value in (0, 1):
        return int(value)
    if isinstance(value, str) and value.strip() in ("0", "1"):
        return int(value.strip())
    raise BadBinary(f"{field} must be 0 or 1, got {value!r} ({where})")


def _coerce(row) -> SubjectRecord:
    if isinstance(row, SubjectRecord):
        rec = row
        get = lambda k: getattr(rec, k)  # noqa: E731
    elif isinstance(row, Mapping):
        missing = [c for c in CSV_COLUMNS if c not in row]
        if missing:
            raise DataError(f"row is missing columns {missing}")
        get = row.__getitem__
    else:
        raise DataError(f"cannot interpret row {row!r}")
    try:
        set_id = int(str(get("set_id")).strip())
    except ValueError:
        raise DataError(f"set_id must be an integer, got {get('set_id')!r}") from None
    subject_id = str(get("subject_id")).strip()
    where = f"set {set_id}, subject {subject_id}"
    return SubjectRecord(
        set_id=set_id,
        subject_id=subject_id,
        exposed=_binary(get("exposed"), "exposed", where),
        broad_case=_binary(get("broad_case"), "broad_case", where),
        narrow_case=_binary(get("narrow_case"), "narrow_case", where),
    )


def parse_study(rows: Iterable[Union[SubjectRecord, Mapping]]) -> Study:
    """Aggregate subject-level rows into a validated :class:`Study`.

    Sets keep the order in which their ids first appear.

    Raises
    ------
    MissingCase, MultipleCases, NarrowReferent, BadBinary, SetTooSmall,
    DuplicateSubject, EmptyStudy
    """
    groups: dict[int, list[SubjectRecord]] = {}
    for row in rows:
        rec = _coerce(row)
        groups.setdefault(rec.set_id, []).append(rec)
    if not groups:
        raise EmptyStudy("no rows")

    ids, sizes, ms, ys, narrow = [], [], [], [], []
    for set_id, recs in groups.items():
        subj = Counter(r.subject_id for r in recs)
        dup = [s for s, c in subj.items() if c > 1]
        if dup:
            raise DuplicateSubject(f"set {set_id}: duplicate subject ids {dup}")
        cases = [r for r in recs if r.broad_case == 1]
        for r in recs:
            if r.narrow_case == 1 and r.broad_case == 0:
                raise NarrowReferent(f"set {set_id}: referent {r.subject_id} flagged narrow_case=1")
        if not cases:
            raise MissingCase(f"set {set_id} has no broad case")
        if len(cases) > 1:
            raise MultipleCases(f"set {set_id} has {len(cases)} broad cases")
        if len(recs) < 2:
            raise SetTooSmall(f"set {set_id} has no referents")
        ids.append(set_id)
        sizes.append(len(recs))
        ms.append(sum(r.exposed for r in recs))
        ys.append(cases[0].exposed)
        narrow.append(cases[0].narrow_case)
    return Study(ids, sizes, ms, ys, narrow)


def study_to_records(study: Study) -> list[SubjectRecord]:
    """Expand a study into subject rows; inverse of :func:`parse_study`.

    Within a set the case comes first, then the exposed referents.
    """
    out = []
    for s in study.sets:
        out.append(SubjectRecord(s.set_id, f"{s.set_id}-1", s.case_exposed, 1, s.is_narrow))
        exposed_refs = s.exposed_count - s.case_exposed
        for j in range(2, s.size + 1):
            out.append(SubjectRecord(s.set_id, f"{s.set_id}-{j}", int(j - 2 < exposed_refs), 0, 0))
    return out


PathOrBuffer = Union[str, os.PathLike, io.TextIOBase]


def read_study_csv(source: PathOrBuffer) -> Study:
    """Read a subject-level CSV (header required, column order free)."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_study_csv(fh)
    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise EmptyStudy("empty CSV")
    header = [h.strip() for h in reader.fieldnames]
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise DataError(f"CSV is missing columns {missing}")
    reader.fieldnames = header
    return parse_study(reader)


def write_study_csv(study: Study, dest: PathOrBuffer) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_study_csv(study, fh)
        return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in study_to_records(study):
        writer.writerow([r.set_id, r.subject_id, r.exposed, r.broad_case, r.narrow_case])


@dataclass(frozen=True)
class StudySummary:
    I: int  # noqa: E741
    narrow_sets: int
    Y_b: int
    Y_n: int
    m_histogram: dict
    odds_ratio: float | None
    odds_ratio_degenerate: bool
    table: tuple  # (cases exposed, cases unexposed, referents exposed, referents unexposed)

    def to_dict(self) -> dict:
        return {
            "I": self.I,
            "narrow_sets": self.narrow_sets,
            "Y_b": self.Y_b,
            "Y_n": self.Y_n,
            "m_histogram": {str(k): v for k, v in sorted(self.m_histogram.items())},
            "odds_ratio": self.odds_ratio,
            "odds_ratio_degenerate": self.odds_ratio_degenerate,
        }


def summarize(study: Study) -> StudySummary:
    """Descriptive statistics, including the crude exposure odds ratio.

    The odds ratio compares exposure odds among cases with exposure odds
    among referents.  When any cell of the 2x2 table is zero it is reported
    as ``None`` and ``odds_ratio_degenerate`` is set.
    """
    y = study.case_exposed
    ce = int(y.sum())
    cu = study.I - ce
    re_ = int((study.exposed_counts - y).sum())
    ru = int((study.sizes - 1).sum()) - re_
    degenerate = min(ce, cu, re_, ru) == 0
    odds = None if degenerate else (ce / cu) / (re_ / ru)
    hist = Counter(int(v) for v in study.exposed_counts)
    return StudySummary(
        I=study.I,
        narrow_sets=study.narrow_count,
        Y_b=ce,
        Y_n=int((y * study.is_narrow).sum()),
        m_histogram=dict(hist),
        odds_ratio=odds,
        odds_ratio_degenerate=degenerate,
        table=(ce, cu, re_, ru),
    )


def rows_from_columns(set_ids: Sequence[int], exposed, broad, narrow, subject_ids=None):
    """Convenience builder for tests and scripts: zip columns into records."""
    if subject_ids is None:
        subject_ids = [str(i) for i in range(len(set_ids))]
    return [SubjectRecord(int(a), str(b), int(c), int(d), int(e))
            for a, b, c, d, e in zip(set_ids, subject_ids, exposed, broad, narrow)]
