"""Cross-model comparisons of posterior summaries.

All operations are pure functions of the summaries (and, where needed, the
panel or rosters): per-grade correlations of classroom-effect estimates,
the distribution of standardized student-effect differences by number of
observed scores, the completeness-gradient scatter, and the pattern-group
mean trajectories of a pattern mixture fit.
"""

from __future__ import annotations

import re

import numpy as np
import pandas as pd

from .panel import N_YEARS, PATTERN_BY_INDEX


class CompareError(Exception):
    pass


def _aligned_teacher_frames(summary_a, summary_b):
    a = summary_a.teacher_effects().set_index(["grade", "tchid"])
    b = summary_b.teacher_effects().set_index(["grade", "tchid"])
    if set(a.index) != set(b.index):
        raise CompareError("teacher key sets differ between summaries")
    b = b.loc[a.index]
    return a, b


def teacher_correlations(summary_a, summary_b):
    """Pearson correlation of posterior-mean classroom effects per grade.

    Returns a length-5 array in grade order 1..5 (NaN for grades with
    fewer than two classrooms).
    """
    a, b = _aligned_teacher_frames(summary_a, summary_b)
    out = np.full(N_YEARS, np.nan)
    grades = a.index.get_level_values("grade")
    for t in range(1, N_YEARS + 1):
        mask = grades == t
        xa = a.loc[mask, "mean"].to_numpy()
        xb = b.loc[mask, "mean"].to_numpy()
        if len(xa) >= 2:
            out[t - 1] = np.corrcoef(xa, xb)[0, 1]
    return out


def student_effect_shift(summary_mar, summary_mnar, panel):
    """Quartiles by n_observed of the standardized student-effect differences.

    Each model's student effects are standardized by that model's posterior
    mean student-effect SD before differencing (MNAR minus MAR).
    """
    nu_a = summary_mar.nu_hat()
    nu_b = summary_mnar.nu_hat()
    da = summary_mar.student_effects().set_index("stuid")
    db = summary_mnar.student_effects().set_index("stuid")
    if set(da.index) != set(db.index):
        raise CompareError("student key sets differ between summaries")
    n_obs = {r.student_id: r.n_observed for r in panel.students}
    diff = db["mean"] / nu_b - da["mean"].loc[db.index] / nu_a
    frame = pd.DataFrame({
        "stuid": db.index,
        "n_observed": [n_obs[s] for s in db.index],
        "shift": diff.to_numpy(),
    })
    rows = []
    for n in range(1, N_YEARS + 1):
        vals = frame.loc[frame["n_observed"] == n, "shift"].to_numpy()
        rows.append({
            "n_observed": n,
            "count": len(vals),
            "q25": np.percentile(vals, 25) if len(vals) else np.nan,
            "median": np.median(vals) if len(vals) else np.nan,
            "q75": np.percentile(vals, 75) if len(vals) else np.nan,
        })
    return pd.DataFrame(rows)


def _ols_slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.var(x) == 0:
        return np.nan, np.nan
    xc = x - x.mean()
    slope = (xc * y).sum() / (xc * xc).sum()
    resid = y - y.mean() - slope * xc
    dof = max(len(x) - 2, 1)
    se = np.sqrt((resid ** 2).sum() / dof / (xc * xc).sum())
    return slope, se


def completeness_gradient(summary_a, summary_b, rosters):
    """Classroom-effect differences (b - a) against complete-data proportion.

    Returns (scatter, slopes): per-classroom rows with the difference in
    posterior means and the roster's proportion of students with all five
    scores, and per-grade least-squares slopes with standard errors plus a
    pooled row (grade 0).
    """
    a, b = _aligned_teacher_frames(summary_a, summary_b)
    rows = []
    for (grade, tid) in a.index:
        roster = rosters.get((grade, tid))
        if roster is None or roster.size == 0:
            continue
        rows.append({
            "grade": grade,
            "tchid": tid,
            "diff": b.loc[(grade, tid), "mean"] - a.loc[(grade, tid), "mean"],
            "complete_proportion": roster.complete_proportion,
        })
    scatter = pd.DataFrame(rows)
    slope_rows = []
    for t in range(1, N_YEARS + 1):
        sub = scatter[scatter["grade"] == t]
        slope, se = _ols_slope(sub["complete_proportion"], sub["diff"])
        slope_rows.append({"grade": t, "slope": slope, "se": se, "n": len(sub)})
    slope, se = _ols_slope(scatter["complete_proportion"], scatter["diff"])
    slope_rows.append({"grade": 0, "slope": slope, "se": se, "n": len(scatter)})
    return scatter, pd.DataFrame(slope_rows)


_MU_GROUP = re.compile(r"mu\[g=(\d+),t=(\d+)\]")


def pattern_means_table(pmix_summary, grouping):
    """Per-group annual means of a pattern mixture fit.

    Returns a DataFrame with one row per (group, year) estimate, carrying
    the member patterns and observed-score count metadata needed to plot
    the mean trajectories.
    """
    if pmix_summary.model != "PMIX":
        raise CompareError("pattern means require a PMIX summary")
    rows = []
    for name in pmix_summary.table.index:
        m = _MU_GROUP.fullmatch(name)
        if not m:
            continue
        gid = int(m.group(1)) - 1
        year = int(m.group(2))
        group = grouping.groups[gid]
        patterns = ",".join(str(i) for i in group.pattern_indices)
        n_scores = {PATTERN_BY_INDEX[i].n_observed for i in group.pattern_indices}
        rows.append({
            "group": gid + 1,
            "grade": year,
            "mean": pmix_summary.table.loc[name, "mean"],
            "sd": pmix_summary.table.loc[name, "sd"],
            "patterns": patterns,
            "n_observed": min(n_scores) if len(n_scores) == 1 else -1,
            "catch_all": group.is_catch_all,
            "students": group.count,
        })
    return pd.DataFrame(rows).sort_values(["group", "grade"]).reset_index(drop=True)
