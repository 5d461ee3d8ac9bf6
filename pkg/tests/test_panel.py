import io

import numpy as np
import pytest

from seqvam import (ALL_PATTERNS, N_YEARS, PanelError, StudentRecord,
                    group_patterns, load_panel, nobs_summary,
                    panel_from_records, pattern_of, save_panel, standardize)
from seqvam.panel import (PATTERN_BY_INDEX, ScorePanel, pattern_from_flags,
                          panel_roundtrip_string)


# -- standardization --------------------------------------------------------


def test_standardize_default_scale():
    assert standardize(430.0, 400.0, 40.0) == pytest.approx(0.75)
    np.testing.assert_allclose(standardize([400.0, 480.0], 400.0, 40.0), [0.0, 2.0])


def test_standardize_rejects_bad_scale():
    with pytest.raises(PanelError):
        standardize(430.0, 400.0, 0.0)
    with pytest.raises(PanelError):
        standardize(430.0, 400.0, -1.0)


# -- response patterns ------------------------------------------------------


def test_pattern_enumeration_canonical():
    assert len(ALL_PATTERNS) == 31
    assert ALL_PATTERNS[0].flags == (True,) * N_YEARS
    assert ALL_PATTERNS[0].index == 1
    # descending number observed, lexicographic flags within ties
    ns = [p.n_observed for p in ALL_PATTERNS]
    assert ns == sorted(ns, reverse=True)
    for a, b in zip(ALL_PATTERNS, ALL_PATTERNS[1:]):
        if a.n_observed == b.n_observed:
            assert a.flags < b.flags
    # the five single-score patterns come last
    assert all(p.n_observed == 1 for p in ALL_PATTERNS[-5:])
    assert [p.index for p in ALL_PATTERNS] == list(range(1, 32))
    assert PATTERN_BY_INDEX[1] is ALL_PATTERNS[0]


def test_pattern_observed_years():
    p = pattern_from_flags((True, False, True, False, False))
    assert p.observed_years == (1, 3)
    assert p.n_observed == 2


def test_pattern_from_flags_rejects_invalid():
    with pytest.raises(PanelError):
        pattern_from_flags((False,) * 5)
    with pytest.raises(PanelError):
        pattern_from_flags((True, False))


# -- student records and panel ----------------------------------------------


def test_student_record_validation():
    with pytest.raises(PanelError):
        StudentRecord("x", (1.0, None), ("t", None))
    with pytest.raises(PanelError):
        StudentRecord("x", (None,) * 5, (None,) * 5)


def test_record_flags_and_pattern():
    rec = StudentRecord("x", (1.0, None, 0.5, None, None), ("a", None, "c", None, None))
    assert rec.response_flags == (True, False, True, False, False)
    assert rec.n_observed == 2
    assert pattern_of(rec).observed_years == (1, 3)


def test_panel_from_records_builds_teacher_lists(small_panel):
    assert small_panel.teachers_by_year[0] == ("a1", "a2")
    assert small_panel.teachers_by_year[1] == ("b1", "b2")
    assert small_panel.teachers_by_year[2] == ()
    assert small_panel.n_students == 6
    assert small_panel.n_observed_scores == 9


def test_panel_rejects_teacher_in_two_years():
    recs = [
        StudentRecord("s1", (1.0, 1.0, None, None, None), ("t", None, None, None, None)),
        StudentRecord("s2", (1.0, 1.0, None, None, None), (None, "t", None, None, None)),
    ]
    with pytest.raises(PanelError, match="distinct effects"):
        panel_from_records(recs)


def test_panel_rejects_unknown_link():
    rec = StudentRecord("s1", (1.0, None, None, None, None), ("t", None, None, None, None))
    with pytest.raises(PanelError, match="unknown teacher"):
        ScorePanel(students=(rec,), teachers_by_year=((),) * 5)


def test_pattern_counts(small_panel):
    counts = small_panel.pattern_counts()
    # s1, s2, s5 share years {1,2}; s3 year {1}; s4, s6 year {2}
    idx_12 = pattern_from_flags((True, True, False, False, False)).index
    idx_1 = pattern_from_flags((True, False, False, False, False)).index
    idx_2 = pattern_from_flags((False, True, False, False, False)).index
    assert counts == {idx_12: 3, idx_1: 1, idx_2: 2}


# -- ingestion ---------------------------------------------------------------


CSV_OK = """stuid,tchid,year,Y
s1,a1,0,0.500000
s1,b1,1,1.000000
s2,a1,0,-0.200000
s2,b2,1,
s3,,0,0.100000
"""


def test_load_panel_basic():
    panel, report = load_panel(io.StringIO(CSV_OK))
    assert report.rows_total == 5
    assert report.rows_malformed == 0
    assert report.students_admitted == 3
    s2 = next(r for r in panel.students if r.student_id == "s2")
    assert s2.scores == (-0.2, None, None, None, None)
    assert s2.teacher_links == ("a1", "b2", None, None, None)   # link-only row kept
    s3 = next(r for r in panel.students if r.student_id == "s3")
    assert s3.teacher_links == (None,) * 5


def test_load_panel_raw_scores():
    csv = "stuid,tchid,year,Y\ns1,t,0,440\n"
    panel, _ = load_panel(io.StringIO(csv), raw_scores=True)
    assert panel.students[0].scores[0] == pytest.approx(1.0)


def test_load_panel_malformed_rows_counted():
    csv = "stuid,tchid,year,Y\ns1,t,0,1.0\n,x,0,1.0\ns2,t2,9,1.0\ns3,t3,1,abc\n"
    panel, report = load_panel(io.StringIO(csv))
    assert report.rows_malformed == 3
    assert report.students_admitted == 1
    assert len(report.row_errors) == 3


def test_load_panel_strict_aborts_on_malformed():
    csv = "stuid,tchid,year,Y\ns1,t,9,1.0\n"
    with pytest.raises(PanelError):
        load_panel(io.StringIO(csv), strict=True)


def test_load_panel_conflicting_duplicates_drop_student():
    csv = ("stuid,tchid,year,Y\n"
           "s1,t,0,1.0\ns1,t,0,2.0\n"       # conflicting score
           "s2,u,1,0.5\ns2,u,1,0.5\n")      # exact duplicate is fine
    panel, report = load_panel(io.StringIO(csv))
    assert report.students_dropped == 1
    assert report.drop_reasons["conflicting_duplicates"] == 1
    assert [r.student_id for r in panel.students] == ["s2"]


def test_load_panel_drops_students_without_scores():
    csv = "stuid,tchid,year,Y\ns1,t,0,\n"
    panel, report = load_panel(io.StringIO(csv))
    assert panel.n_students == 0
    assert report.drop_reasons["no_valid_score"] == 1


def test_load_panel_empty_input():
    panel, report = load_panel(io.StringIO("stuid,tchid,year,Y\n"))
    assert panel.n_students == 0
    assert report.rows_total == 0
    assert "zero data rows" in report.to_text()


def test_ingest_report_kv_format():
    _, report = load_panel(io.StringIO(CSV_OK))
    kv = dict(line.split("=") for line in report.to_kv().strip().splitlines())
    assert kv["rows_total"] == "5"
    assert kv["students_admitted"] == "3"


def test_save_load_round_trip(small_panel, tmp_path):
    path = tmp_path / "panel.csv"
    save_panel(small_panel, str(path))
    reloaded, _ = load_panel(str(path))
    assert reloaded.students == small_panel.students
    assert reloaded.teachers_by_year == small_panel.teachers_by_year
    # byte-exact second pass
    assert panel_roundtrip_string(reloaded) == path.read_text()


# -- pattern grouping --------------------------------------------------------


def _panel_with_pattern_counts(counts):
    """counts: {flags tuple: n_students}; no teacher links needed."""
    recs = []
    i = 0
    for flags, n in counts.items():
        for _ in range(n):
            recs.append(StudentRecord(
                f"s{i:04d}",
                tuple(0.0 if f else None for f in flags),
                (None,) * 5))
            i += 1
    return panel_from_records(recs)


def test_group_patterns_threshold_oracle():
    # pattern A: 3 students, pattern B: 100 students, threshold 10
    a = (True, False, False, False, False)
    b = (True, True, True, True, True)
    panel = _panel_with_pattern_counts({a: 3, b: 100})
    grouping = group_patterns(panel, 10)
    assert grouping.n_groups == 2
    gb = grouping.groups[grouping.group_of(pattern_from_flags(b))]
    ga = grouping.groups[grouping.group_of(pattern_from_flags(a))]
    assert not gb.is_catch_all and gb.count == 100
    assert ga.is_catch_all
    assert ga.year_flags == (True,) * 5       # catch-all estimates all years
    assert ga.count == 3


def test_group_patterns_threshold_zero_standalone():
    b = (True, True, True, True, True)
    panel = _panel_with_pattern_counts({b: 4})
    grouping = group_patterns(panel, 0)
    assert grouping.n_groups == 31
    assert grouping.catch_all_id is None
    assert all(not g.is_catch_all for g in grouping.groups)


def test_group_single_score_property():
    a = (False, False, True, False, False)
    panel = _panel_with_pattern_counts({a: 30})
    grouping = group_patterns(panel, 10)
    ga = grouping.groups[grouping.group_of(pattern_from_flags(a))]
    assert ga.single_score
    assert ga.year_flags == a
    # the catch-all group (the other 30 patterns) is never single-score
    catch = grouping.groups[grouping.catch_all_id]
    assert not catch.single_score


def test_group_patterns_rejects_negative_threshold(small_panel):
    with pytest.raises(PanelError):
        group_patterns(small_panel, -1)


# -- summaries ---------------------------------------------------------------


def test_nobs_summary(small_panel):
    df = nobs_summary(small_panel)
    assert len(df) == 25
    cell = df[(df.grade == 1) & (df.n_observed == 2)]
    # s1, s2, s5 have two scores with year-1 values 0.5, -0.2, 0.9
    assert cell["count"].iloc[0] == 3
    assert cell["mean_score"].iloc[0] == pytest.approx((0.5 - 0.2 + 0.9) / 3)
    empty = df[(df.grade == 5) & (df.n_observed == 1)]
    assert empty["count"].iloc[0] == 0
    assert np.isnan(empty["mean_score"].iloc[0])
