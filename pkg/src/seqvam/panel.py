"""Longitudinal score panel: ingestion, standardization and response patterns.

The data model is a five-year student-by-year score table.  Each student
carries up to five standardized mathematics scores, one per grade/year, a
teacher link for each year in which one is known, and the implied 5-bit
response pattern.  Students with no valid score are rejected at ingestion.
"""

from __future__ import annotations

import csv
import io
import itertools
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

N_YEARS = 5

#: default rescaling of the raw district scores (subtract 400, divide by 40)
DEFAULT_STANDARDIZATION = (400.0, 40.0)

CSV_HEADER = ("stuid", "tchid", "year", "Y")


class PanelError(Exception):
    """Raised for configuration or validation failures in panel handling."""


def standardize(raw_score, offset, scale):
    """Map a raw test score onto the standardized scale: (raw - offset)/scale.

    Parameters
    ----------
    raw_score : float or array_like
        Score in raw test units.
    offset, scale : float
        Location and scale of the rescaling, in raw units.  ``scale`` must
        be strictly positive.
    """
    if scale <= 0:
        raise PanelError(f"standardization scale must be positive, got {scale}")
    return (np.asarray(raw_score, dtype=float) - offset) / scale


# ---------------------------------------------------------------------------
# Response patterns


@dataclass(frozen=True)
class ResponsePattern:
    """One of the 31 possible patterns of observed annual scores.

    ``index`` is 1-based under the canonical enumeration: descending number
    of observed scores, ties broken lexicographically on the flag tuple.
    """

    flags: tuple
    index: int

    @property
    def n_observed(self):
        return sum(self.flags)

    @property
    def observed_years(self):
        """1-based years with an observed score."""
        return tuple(t + 1 for t, f in enumerate(self.flags) if f)


def _enumerate_patterns():
    combos = [c for c in itertools.product((True, False), repeat=N_YEARS) if any(c)]
    combos.sort(key=lambda f: (-sum(f), f))
    return tuple(ResponsePattern(flags=f, index=i + 1) for i, f in enumerate(combos))


#: canonical enumeration of all 31 patterns, index 1 is the complete pattern
ALL_PATTERNS = _enumerate_patterns()
_PATTERN_BY_FLAGS = {p.flags: p for p in ALL_PATTERNS}
PATTERN_BY_INDEX = {p.index: p for p in ALL_PATTERNS}


def pattern_from_flags(flags):
    flags = tuple(bool(f) for f in flags)
    if len(flags) != N_YEARS or not any(flags):
        raise PanelError(f"invalid response flags {flags}")
    return _PATTERN_BY_FLAGS[flags]


# ---------------------------------------------------------------------------
# Student records and the panel


@dataclass(frozen=True)
class StudentRecord:
    """Scores, teacher links and response flags for one student.

    ``scores`` and ``teacher_links`` are 5-slot tuples with ``None`` in
    unobserved/unknown slots.  A slot has a score exactly when its response
    flag is set; a teacher link may be known even for an unscored year
    (and vice versa, an observed score may carry an unknown teacher).
    """

    student_id: str
    scores: tuple
    teacher_links: tuple

    def __post_init__(self):
        if len(self.scores) != N_YEARS or len(self.teacher_links) != N_YEARS:
            raise PanelError(f"student {self.student_id}: records must have {N_YEARS} slots")
        if not any(s is not None for s in self.scores):
            raise PanelError(f"student {self.student_id} has no observed score")

    @property
    def response_flags(self):
        return tuple(s is not None for s in self.scores)

    @property
    def n_observed(self):
        return sum(self.response_flags)


def pattern_of(record):
    """Response pattern of a student record under the canonical enumeration."""
    return pattern_from_flags(record.response_flags)


@dataclass(frozen=True)
class ScorePanel:
    """Immutable collection of student records plus the per-year teacher lists.

    ``teachers_by_year`` holds, for each year, the sorted distinct teacher
    identifiers linked by any student in that year.  A classroom-year is a
    distinct effect, so the same identifier may not appear in two years.
    """

    students: tuple
    teachers_by_year: tuple
    standardization: tuple = DEFAULT_STANDARDIZATION

    def __post_init__(self):
        seen = {}
        for t, teachers in enumerate(self.teachers_by_year):
            for tid in teachers:
                if tid in seen:
                    raise PanelError(
                        f"teacher {tid!r} appears in years {seen[tid] + 1} and {t + 1}; "
                        "classroom-years must be distinct effects"
                    )
                seen[tid] = t
        for rec in self.students:
            for t, tid in enumerate(rec.teacher_links):
                if tid is not None and tid not in self.teachers_by_year[t]:
                    raise PanelError(
                        f"student {rec.student_id} links to unknown teacher {tid!r} in year {t + 1}"
                    )

    @property
    def n_students(self):
        return len(self.students)

    @property
    def n_observed_scores(self):
        return sum(r.n_observed for r in self.students)

    def pattern_counts(self):
        """Counter of canonical pattern index -> number of students."""
        return Counter(pattern_of(r).index for r in self.students)


def panel_from_records(records, standardization=DEFAULT_STANDARDIZATION):
    """Build a ScorePanel, deriving the per-year teacher lists from the records."""
    teachers = [set() for _ in range(N_YEARS)]
    for rec in records:
        for t, tid in enumerate(rec.teacher_links):
            if tid is not None:
                teachers[t].add(tid)
    return ScorePanel(
        students=tuple(sorted(records, key=lambda r: r.student_id)),
        teachers_by_year=tuple(tuple(sorted(s)) for s in teachers),
        standardization=standardization,
    )


# ---------------------------------------------------------------------------
# Ingestion


@dataclass
class IngestReport:
    """Row and student accounting for one ingestion run."""

    rows_total: int = 0
    rows_malformed: int = 0
    students_admitted: int = 0
    students_dropped: int = 0
    drop_reasons: dict = field(default_factory=dict)
    row_errors: list = field(default_factory=list)

    @property
    def students_total(self):
        return self.students_admitted + self.students_dropped

    def to_kv(self):
        lines = [
            f"rows_total={self.rows_total}",
            f"rows_malformed={self.rows_malformed}",
            f"students_total={self.students_total}",
            f"students_admitted={self.students_admitted}",
            f"students_dropped={self.students_dropped}",
        ]
        for reason in sorted(self.drop_reasons):
            lines.append(f"dropped[{reason}]={self.drop_reasons[reason]}")
        return "\n".join(lines) + "\n"

    def to_text(self):
        out = [
            "Ingestion report",
            f"  rows read:          {self.rows_total}",
            f"  malformed rows:     {self.rows_malformed}",
            f"  students admitted:  {self.students_admitted}",
            f"  students dropped:   {self.students_dropped}",
        ]
        if self.rows_total == 0:
            out.append("  note: input contained zero data rows")
        for reason in sorted(self.drop_reasons):
            out.append(f"    {reason}: {self.drop_reasons[reason]}")
        for err in self.row_errors[:20]:
            out.append(f"  row error: {err}")
        return "\n".join(out) + "\n"


def _open_stream(source):
    if hasattr(source, "read"):
        return source, False
    return open(source, "r", newline=""), True


def load_panel(source, standardization=DEFAULT_STANDARDIZATION, raw_scores=False, strict=False):
    """Read the supplement-format CSV into a ScorePanel.

    The expected header is ``stuid,tchid,year,Y`` with ``year`` in 0..4
    (grade level equals year+1) and ``Y`` already standardized.  With
    ``raw_scores=True`` the standardization is applied at load.  Rows with
    an empty ``Y`` record a teacher link without a score.

    Returns
    -------
    (ScorePanel, IngestReport)
    """
    report = IngestReport()
    scores = defaultdict(dict)       # stuid -> year -> float
    links = defaultdict(dict)        # stuid -> year -> tchid
    conflicted = set()
    order = []
    seen = set()

    stream, close = _open_stream(source)
    try:
        reader = csv.DictReader(stream)
        for lineno, row in enumerate(reader, start=2):
            report.rows_total += 1
            try:
                stuid = (row.get("stuid") or "").strip()
                if not stuid:
                    raise ValueError("missing stuid")
                year = int((row.get("year") or "").strip())
                if not 0 <= year < N_YEARS:
                    raise ValueError(f"year {year} outside 0..4")
                tchid = (row.get("tchid") or "").strip() or None
                ytxt = (row.get("Y") or "").strip()
                y = float(ytxt) if ytxt else None
            except (TypeError, ValueError) as exc:
                report.rows_malformed += 1
                msg = f"line {lineno}: {exc}"
                report.row_errors.append(msg)
                if strict:
                    raise PanelError(msg) from exc
                continue

            if stuid not in seen:
                seen.add(stuid)
                order.append(stuid)
            if raw_scores and y is not None:
                y = float(standardize(y, *standardization))
            if y is not None:
                prev = scores[stuid].get(year)
                if prev is not None and prev != y:
                    conflicted.add(stuid)
                    msg = f"line {lineno}: conflicting duplicate score for ({stuid}, year {year})"
                    report.row_errors.append(msg)
                    if strict:
                        raise PanelError(msg)
                else:
                    scores[stuid][year] = y
            if tchid is not None:
                prev = links[stuid].get(year)
                if prev is not None and prev != tchid:
                    conflicted.add(stuid)
                    msg = f"line {lineno}: conflicting teacher link for ({stuid}, year {year})"
                    report.row_errors.append(msg)
                    if strict:
                        raise PanelError(msg)
                else:
                    links[stuid][year] = tchid
    finally:
        if close:
            stream.close()

    records = []
    for stuid in order:
        if stuid in conflicted:
            report.students_dropped += 1
            report.drop_reasons["conflicting_duplicates"] = (
                report.drop_reasons.get("conflicting_duplicates", 0) + 1
            )
            continue
        srow = tuple(scores[stuid].get(t) for t in range(N_YEARS))
        if not any(s is not None for s in srow):
            report.students_dropped += 1
            report.drop_reasons["no_valid_score"] = (
                report.drop_reasons.get("no_valid_score", 0) + 1
            )
            continue
        lrow = tuple(links[stuid].get(t) for t in range(N_YEARS))
        records.append(StudentRecord(student_id=stuid, scores=srow, teacher_links=lrow))
    report.students_admitted = len(records)
    panel = panel_from_records(records, standardization=standardization)
    return panel, report


def save_panel(panel, path_or_stream):
    """Write a panel back to the supplement CSV schema (scores at 6 decimals).

    Rows are emitted for every year in which a student has a score or a
    known teacher link, sorted by student then year, so that a save/load
    round trip reproduces the panel exactly.
    """
    stream, close = (path_or_stream, False) if hasattr(path_or_stream, "write") else (
        open(path_or_stream, "w", newline=""), True)
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in sorted(panel.students, key=lambda r: r.student_id):
            for t in range(N_YEARS):
                score = rec.scores[t]
                link = rec.teacher_links[t]
                if score is None and link is None:
                    continue
                writer.writerow([
                    rec.student_id,
                    link or "",
                    t,
                    "" if score is None else f"{score:.6f}",
                ])
    finally:
        if close:
            stream.close()


def panel_roundtrip_string(panel):
    buf = io.StringIO()
    save_panel(panel, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Pattern grouping


@dataclass(frozen=True)
class PatternGroup:
    """One estimation group of response patterns."""

    group_id: int
    pattern_indices: tuple
    count: int
    is_catch_all: bool

    @property
    def year_flags(self):
        """Union of observed-year flags over member patterns; the catch-all
        group estimates parameters for all five years."""
        if self.is_catch_all:
            return (True,) * N_YEARS
        flags = [False] * N_YEARS
        for idx in self.pattern_indices:
            for t, f in enumerate(PATTERN_BY_INDEX[idx].flags):
                flags[t] = flags[t] or f
        return tuple(flags)

    @property
    def single_score(self):
        """True when every member pattern has one observed score; such a
        group carries no separate student effect."""
        return not self.is_catch_all and all(
            PATTERN_BY_INDEX[i].n_observed == 1 for i in self.pattern_indices
        )


@dataclass(frozen=True)
class PatternGrouping:
    """Assignment of each of the 31 patterns to an estimation group."""

    assignments: dict       # pattern index -> group id
    threshold: int
    groups: tuple           # PatternGroup, ordered by group id

    @property
    def n_groups(self):
        return len(self.groups)

    @property
    def catch_all_id(self):
        for g in self.groups:
            if g.is_catch_all:
                return g.group_id
        return None

    def group_of(self, pattern):
        return self.assignments[pattern.index]


def group_patterns(panel, threshold):
    """Merge patterns rarer than ``threshold`` students into one catch-all group.

    With ``threshold=0`` every pattern stands alone (31 groups).  Standalone
    groups are ordered by canonical pattern index; the catch-all, when
    present, comes last.
    """
    if threshold < 0:
        raise PanelError("threshold must be nonnegative")
    counts = panel.pattern_counts()
    standalone = [p.index for p in ALL_PATTERNS if counts.get(p.index, 0) >= threshold]
    merged = [p.index for p in ALL_PATTERNS if counts.get(p.index, 0) < threshold]
    groups = []
    assignments = {}
    for gid, idx in enumerate(standalone):
        groups.append(PatternGroup(gid, (idx,), counts.get(idx, 0), is_catch_all=False))
        assignments[idx] = gid
    if merged:
        gid = len(groups)
        total = sum(counts.get(i, 0) for i in merged)
        groups.append(PatternGroup(gid, tuple(merged), total, is_catch_all=True))
        for idx in merged:
            assignments[idx] = gid
    return PatternGrouping(assignments=assignments, threshold=threshold, groups=tuple(groups))


# ---------------------------------------------------------------------------
# Summaries


def nobs_summary(panel):
    """Mean standardized score and count by (grade, number of observed scores).

    Returns a tidy DataFrame with columns grade, n_observed, mean_score and
    count covering all 25 cells; cells with no students have count 0 and a
    missing mean.
    """
    sums = np.zeros((N_YEARS, N_YEARS))
    counts = np.zeros((N_YEARS, N_YEARS), dtype=int)
    for rec in panel.students:
        n = rec.n_observed
        for t, s in enumerate(rec.scores):
            if s is not None:
                sums[t, n - 1] += s
                counts[t, n - 1] += 1
    rows = []
    for t in range(N_YEARS):
        for n in range(N_YEARS):
            c = counts[t, n]
            rows.append({
                "grade": t + 1,
                "n_observed": n + 1,
                "mean_score": sums[t, n] / c if c else np.nan,
                "count": c,
            })
    return pd.DataFrame(rows)
