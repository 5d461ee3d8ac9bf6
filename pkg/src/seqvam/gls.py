"""Closed-form teacher-effect machinery with variance components held fixed.

With all variance components and annual means treated as known, the
posterior mean of the classroom effects solves a Gaussian linear system in
which the student effect is marginalized into a per-student residual
covariance R_i = nu^2 * ones + diag(sigma_t^2) over the observed years.
The diagonal of R_i^{-1} gives the leverage weight of each score: the
reciprocal of the variance of that adjusted score given the student's
other scores.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .panel import ALL_PATTERNS, N_YEARS, PanelError, pattern_of


@dataclass(frozen=True)
class VarianceProfile:
    """Fixed variance components and out-year weights.

    ``alpha`` is the full 5x5 lower-triangular weight matrix with unit
    diagonal; entry [t, t*] multiplies the year-(t*+1) classroom effect in
    a year-(t+1) score.
    """

    nu2: float
    sigma2: tuple
    tau2: tuple = (1.0,) * N_YEARS
    alpha: np.ndarray = field(default_factory=lambda: np.eye(N_YEARS))

    def __post_init__(self):
        if self.nu2 < 0 or any(s <= 0 for s in self.sigma2) or any(t <= 0 for t in self.tau2):
            raise PanelError("variance components must be positive")
        a = np.asarray(self.alpha, dtype=float)
        if a.shape != (N_YEARS, N_YEARS) or not np.allclose(np.diag(a), 1.0):
            raise PanelError("alpha must be 5x5 with unit diagonal")


def alpha_matrix(pairs):
    """Build the 5x5 weight matrix from {(t, t*): value} with 1-based years."""
    a = np.eye(N_YEARS)
    for (t, ts), v in pairs.items():
        if not 1 <= ts < t <= N_YEARS:
            raise PanelError(f"alpha slot ({t},{ts}) must satisfy t* < t")
        a[t - 1, ts - 1] = v
    return a


def residual_block(observed_years0, nu2, sigma2):
    """R_i over the given 0-based observed years."""
    idx = np.asarray(observed_years0, dtype=int)
    sig = np.asarray(sigma2, dtype=float)[idx]
    return nu2 * np.ones((len(idx), len(idx))) + np.diag(sig)


def leverage_weights(pattern, nu2, sigma2):
    """Per-score leverage weights for a response pattern.

    Returns a dict mapping each observed 1-based year to the corresponding
    diagonal entry of R_i^{-1} (equivalently 1/Var(e_t | other e's)).
    """
    if nu2 < 0 or any(s <= 0 for s in sigma2):
        raise PanelError("variances must be positive")
    years0 = [t - 1 for t in pattern.observed_years]
    r = residual_block(years0, nu2, sigma2)
    w = np.diag(np.linalg.inv(r))
    if np.any(w <= 0):
        raise PanelError("residual block not positive definite")
    return {t + 1: float(w[k]) for k, t in enumerate(years0)}


def average_weights_by_count(nu2, sigma2):
    """Mean leverage weight for students with n = 1..5 observed scores.

    For each n the per-pattern mean weight is averaged, unweighted, over
    all C(5, n) response patterns with that many scores.
    """
    out = np.zeros(N_YEARS)
    for n in range(1, N_YEARS + 1):
        means = []
        for combo in itertools.combinations(range(N_YEARS), n):
            r = residual_block(combo, nu2, sigma2)
            means.append(np.diag(np.linalg.inv(r)).mean())
        out[n - 1] = np.mean(means)
    return out


def _mean_per_obs(design, means, grouping=None):
    means = np.asarray(means, dtype=float)
    if means.ndim == 1:
        return means[design.year]
    if grouping is None:
        raise PanelError("per-group means require a PatternGrouping")
    group_of_student = np.array(
        [grouping.group_of(pattern_of(r)) for r in design.panel.students], dtype=np.intp
    )
    return means[group_of_student[design.student], design.year]


def gls_teacher_effects(panel, design, profile, means, grouping=None):
    """Posterior-mean classroom effects with variances and means fixed.

    ``means`` is either the 5-vector of annual means or an (n_groups, 5)
    array of pattern-group means together with ``grouping``.  Returns a dict
    keyed by (1-based year, teacher id).
    """
    a = np.asarray(profile.alpha, dtype=float)
    mask = design.teacher >= 0
    weights = a[design.year][:, :] * mask          # (n_obs, 5) coefficient per slot
    e = design.y - _mean_per_obs(design, means, grouping)

    n_eff = design.n_effects
    m = np.zeros((n_eff, n_eff))
    b = np.zeros(n_eff)
    sigma2 = np.asarray(profile.sigma2, dtype=float)

    # accumulate X_i' R_i^{-1} X_i per student; rows are student-major
    bounds = np.flatnonzero(np.r_[True, np.diff(design.student) != 0, True])
    for k in range(len(bounds) - 1):
        lo, hi = bounds[k], bounds[k + 1]
        years = design.year[lo:hi]
        r = profile.nu2 * np.ones((hi - lo, hi - lo)) + np.diag(sigma2[years])
        rinv = np.linalg.inv(r)
        cols = design.teacher[lo:hi]               # (n_i, 5)
        keep = cols.ravel() >= 0
        active = cols.ravel()[keep]                # global effect index per entry
        # local design: one column per (row, slot) entry carrying its weight
        x = np.zeros((hi - lo, keep.sum()))
        row_of = np.repeat(np.arange(hi - lo), N_YEARS)[keep]
        x[row_of, np.arange(keep.sum())] = weights[lo:hi].ravel()[keep]
        xtr = x.T @ rinv
        np.add.at(b, active, xtr @ e[lo:hi])
        np.add.at(m, (active[:, None], active[None, :]), xtr @ x)
    tau2 = np.asarray(profile.tau2, dtype=float)
    m[np.diag_indices(n_eff)] += 1.0 / tau2[design.effect_year]
    theta = np.linalg.solve(m, b)
    return {
        (t + 1, tid): float(theta[g])
        for g, (t, tid) in enumerate(design.effect_keys)
    }


def weight_report(panel, profile):
    """Per-score leverage weights plus classroom aggregates.

    Returns (scores, classrooms): ``scores`` has one row per observed score
    with its weight; ``classrooms`` aggregates mean weight and the
    complete-data proportion per classroom-year.
    """
    score_rows = []
    weights_by_student = {}
    for rec in panel.students:
        w = leverage_weights(pattern_of(rec), profile.nu2, profile.sigma2)
        weights_by_student[rec.student_id] = w
        for year, value in w.items():
            score_rows.append({
                "stuid": rec.student_id,
                "grade": year,
                "n_observed": rec.n_observed,
                "weight": value,
            })
    scores = pd.DataFrame(score_rows)

    class_rows = []
    rosters = {}
    for rec in panel.students:
        for t, tid in enumerate(rec.teacher_links):
            if tid is not None:
                rosters.setdefault((t + 1, tid), []).append(rec)
    for (year, tid), recs in sorted(rosters.items()):
        weights = [
            w for r in recs
            for yr, w in weights_by_student[r.student_id].items()
        ]
        class_rows.append({
            "grade": year,
            "tchid": tid,
            "n_students": len(recs),
            "mean_weight": float(np.mean(weights)) if weights else np.nan,
            "complete_proportion": np.mean([r.n_observed == N_YEARS for r in recs]),
        })
    classrooms = pd.DataFrame(class_rows)
    return scores, classrooms
