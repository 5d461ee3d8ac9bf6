"""Sequential multi-membership design linking scores to classroom effects.

Each observed score of year t receives a contribution from the student's
classroom of every year t* <= t in which a teacher link is known: weight 1
for the current year and the out-year weight alpha[t, t*] for prior years.
Years with unknown teachers contribute nothing (the zero-effect policy).
Links, not scores, drive contributions: a known prior-year teacher enters
later-year rows even when that prior year's score is missing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .panel import N_YEARS, PanelError


@dataclass(frozen=True)
class EffectIndex:
    """Position of one classroom effect: 1-based year and the slot of the
    teacher within that year's teacher list."""

    year: int
    teacher_slot: int


@dataclass(frozen=True)
class DesignRow:
    """Contributions of classroom effects to one observed score.

    Each contribution pairs an effect with the name of its weight slot
    ``(t, t*)``; the current-year slot ``(t, t)`` carries constant weight 1.
    """

    student_id: str
    year: int
    contributions: tuple   # ((EffectIndex, (t, t_star)), ...)


class Design:
    """Vectorized view of the design, one row per observed score.

    Effects are numbered globally, ordered by (year, teacher id).  The array
    layout is student-major: rows are sorted by student then year, keeping
    each student's residual block contiguous.

    Attributes
    ----------
    y : (n_obs,) float
        Observed standardized scores.
    student : (n_obs,) int
        Index into ``student_ids``.
    year : (n_obs,) int
        0-based year of the score.
    teacher : (n_obs, 5) int
        Column t* holds the global effect index of the student's year-(t*+1)
        teacher when known and t* <= t, else -1.
    """

    def __init__(self, panel):
        self.panel = panel
        self.student_ids = [r.student_id for r in panel.students]
        self.effect_keys = []           # (year0, teacher_id), ordered by year then id
        self._slot = {}                 # (year0, teacher_id) -> global index
        for t in range(N_YEARS):
            for j, tid in enumerate(panel.teachers_by_year[t]):
                self._slot[(t, tid)] = len(self.effect_keys)
                self.effect_keys.append((t, tid))
        self.n_effects = len(self.effect_keys)
        self.effect_year = np.array([t for t, _ in self.effect_keys], dtype=np.intp)

        y, student, year, teacher = [], [], [], []
        for si, rec in enumerate(panel.students):
            slots = []
            for t in range(N_YEARS):
                tid = rec.teacher_links[t]
                if tid is None:
                    slots.append(-1)
                else:
                    key = (t, tid)
                    if key not in self._slot:
                        raise PanelError(
                            f"teacher {tid!r} referenced in year {t + 1} is absent "
                            "from the panel teacher lists"
                        )
                    slots.append(self._slot[key])
            for t in range(N_YEARS):
                if rec.scores[t] is None:
                    continue
                y.append(rec.scores[t])
                student.append(si)
                year.append(t)
                teacher.append([slots[ts] if ts <= t else -1 for ts in range(N_YEARS)])
        self.y = np.asarray(y, dtype=float)
        self.student = np.asarray(student, dtype=np.intp)
        self.year = np.asarray(year, dtype=np.intp)
        self.teacher = np.asarray(teacher, dtype=np.intp).reshape(len(y), N_YEARS)

    @property
    def n_obs(self):
        return len(self.y)

    @property
    def n_students(self):
        return len(self.student_ids)

    def effects_of_year(self, t):
        """slice of global effect indices belonging to 0-based year t."""
        lo = int(np.searchsorted(self.effect_year, t, side="left"))
        hi = int(np.searchsorted(self.effect_year, t, side="right"))
        return slice(lo, hi)

    @property
    def rows(self):
        """The design as explicit DesignRow objects (stable ordering)."""
        out = []
        teachers_by_year = self.panel.teachers_by_year
        for o in range(self.n_obs):
            t = int(self.year[o])
            contribs = []
            for ts in range(t + 1):
                g = int(self.teacher[o, ts])
                if g < 0:
                    continue
                _, tid = self.effect_keys[g]
                slot = teachers_by_year[ts].index(tid)
                contribs.append((EffectIndex(year=ts + 1, teacher_slot=slot), (t + 1, ts + 1)))
            out.append(DesignRow(
                student_id=self.student_ids[self.student[o]],
                year=t + 1,
                contributions=tuple(contribs),
            ))
        return out

    def dump_csv(self, path):
        """Debug dump: one line per (score, contributing effect)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["stuid", "year", "contributing_year", "tchid", "weight_slot"])
            for row in self.rows:
                for eff, (t, ts) in row.contributions:
                    tid = self.panel.teachers_by_year[eff.year - 1][eff.teacher_slot]
                    writer.writerow([row.student_id, row.year, eff.year, tid,
                                     f"alpha[{t},{ts}]" if t != ts else "1"])


def build_design(panel):
    """Build the sequential multi-membership design for a panel."""
    return Design(panel)


@dataclass(frozen=True)
class Roster:
    """Students linked to one classroom-year with completeness statistics."""

    year: int
    teacher_id: str
    student_ids: tuple
    n_complete: int

    @property
    def size(self):
        return len(self.student_ids)

    @property
    def complete_proportion(self):
        return self.n_complete / self.size if self.size else float("nan")


def classroom_rosters(panel):
    """Per-classroom rosters keyed by (1-based year, teacher id)."""
    members = {}
    for t in range(N_YEARS):
        for tid in panel.teachers_by_year[t]:
            members[(t + 1, tid)] = []
    for rec in panel.students:
        for t, tid in enumerate(rec.teacher_links):
            if tid is not None:
                members[(t + 1, tid)].append(rec)
    return {
        key: Roster(
            year=key[0],
            teacher_id=key[1],
            student_ids=tuple(r.student_id for r in recs),
            n_complete=sum(1 for r in recs if r.n_observed == N_YEARS),
        )
        for key, recs in members.items()
    }
