"""Synthetic panel generation with known truth and configurable missingness.

Scores follow the sequential multi-membership model: annual mean plus the
alpha-weighted effects of the current and all prior classrooms, plus a
student effect and annual noise.  Missingness mechanisms delete scores
(and, by default, the matching teacher links) after generation, never
changing the surviving score values, and always leave every student with
at least one observed score.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .gls import VarianceProfile
from .model import selection_loglik
from .panel import N_YEARS, PanelError, ScorePanel, StudentRecord, panel_from_records


@dataclass(frozen=True)
class GeneratorConfig:
    """Scale, truth and class-assignment rule for one synthetic panel.

    ``assignment`` is ``random`` or ``sorted``; under ``sorted`` students
    are ranked by their latent effect plus noise and packed into classes in
    rank order, with ``mixing`` in [0, 1] interpolating from pure sorting
    (0) to fully random assignment (1).
    """

    students: int = 2000
    teachers_per_year: int = 20
    seed: int = 0
    mu: tuple = (3.4, 4.0, 4.7, 5.3, 6.0)
    alpha: np.ndarray = field(default_factory=lambda: np.eye(N_YEARS))
    tau: tuple = (0.65, 0.57, 0.55, 0.43, 0.42)
    nu: float = 0.71
    sigma: tuple = (0.58, 0.47, 0.45, 0.37, 0.37)
    assignment: str = "random"
    mixing: float = 0.5

    def __post_init__(self):
        if self.students <= 0 or self.teachers_per_year <= 0:
            raise PanelError("counts must be positive")
        if not 0.0 <= self.mixing <= 1.0:
            raise PanelError("mixing parameter must lie in [0, 1]")
        if self.assignment not in ("random", "sorted"):
            raise PanelError(f"unknown assignment rule {self.assignment!r}")

    def variance_profile(self):
        return VarianceProfile(
            nu2=self.nu ** 2,
            sigma2=tuple(s ** 2 for s in self.sigma),
            tau2=tuple(t ** 2 for t in self.tau),
            alpha=np.asarray(self.alpha, dtype=float),
        )


@dataclass(frozen=True)
class MissingnessMechanism:
    """How scores are deleted from a complete panel.

    kinds: ``none``; ``mcar`` with a per-year deletion rate; ``sel`` drawing
    the number of observed scores from the hazard model on the latent
    student effect; ``sel2`` with independent per-year logistic observation
    probabilities; ``score`` with the observation logit depending on the
    current-year generated score's deviation from its annual mean.
    """

    kind: str = "none"
    rate: float = 0.0
    a: tuple = (0.0, 0.0, 0.0, 0.0)
    beta: object = 0.0
    intercept: float = 1.0
    coef: float = 0.0
    co_delete_links: bool = True

    def __post_init__(self):
        kinds = ("none", "mcar", "sel", "sel2", "score")
        if self.kind not in kinds:
            raise PanelError(f"unknown missingness kind {self.kind!r}")
        if self.kind == "mcar" and not 0.0 <= self.rate < 1.0:
            raise PanelError("mcar rate must lie in [0, 1)")


@dataclass(frozen=True)
class TruthRecord:
    """Generating parameters and realized effects of a synthetic panel."""

    config: GeneratorConfig
    theta: dict        # (1-based year, teacher id) -> effect
    delta: dict        # student id -> effect

    def variance_profile(self):
        return self.config.variance_profile()


def _teacher_id(year0, k):
    return f"t{year0 + 1}_{k:03d}"


def _student_id(i):
    return f"s{i:05d}"


def simulate_panel(config):
    """Generate a complete 5-year panel plus its truth record."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    n = config.students
    j = config.teachers_per_year
    delta = rng.normal(0.0, config.nu, size=n)
    theta = {
        t: rng.normal(0.0, config.tau[t], size=j) for t in range(N_YEARS)
    }
    alpha = np.asarray(config.alpha, dtype=float)

    # class assignment per year
    assignment = np.empty((n, N_YEARS), dtype=int)
    for t in range(N_YEARS):
        if config.assignment == "random":
            order = rng.permutation(n)
        else:
            noise = rng.normal(0.0, 1.0, size=n)
            key = (1.0 - config.mixing) * (delta / config.nu) + config.mixing * noise
            order = np.argsort(key, kind="stable")
        classes = np.empty(n, dtype=int)
        classes[order] = (np.arange(n) * j) // n
        assignment[:, t] = classes

    scores = np.empty((n, N_YEARS))
    for t in range(N_YEARS):
        contrib = np.zeros(n)
        for ts in range(t + 1):
            contrib += alpha[t, ts] * theta[ts][assignment[:, ts]]
        scores[:, t] = config.mu[t] + contrib + delta + rng.normal(
            0.0, config.sigma[t], size=n)

    records = []
    for i in range(n):
        records.append(StudentRecord(
            student_id=_student_id(i),
            scores=tuple(float(scores[i, t]) for t in range(N_YEARS)),
            teacher_links=tuple(_teacher_id(t, assignment[i, t]) for t in range(N_YEARS)),
        ))
    panel = panel_from_records(records)
    truth = TruthRecord(
        config=config,
        theta={(t + 1, _teacher_id(t, k)): float(theta[t][k])
               for t in range(N_YEARS) for k in range(j)},
        delta={_student_id(i): float(delta[i]) for i in range(n)},
    )
    return panel, truth


def _draw_flags(rng, mechanism, delta_i, score_dev):
    """One 5-flag observation draw for a single student (may be all-False)."""
    if mechanism.kind == "none":
        return np.ones(N_YEARS, dtype=bool)
    if mechanism.kind == "mcar":
        return rng.uniform(size=N_YEARS) >= mechanism.rate
    if mechanism.kind == "sel":
        a = np.asarray(mechanism.a, dtype=float)
        logits = a + float(mechanism.beta) * delta_i
        h = 1.0 / (1.0 + np.exp(-logits))
        n_obs = N_YEARS
        for k in range(N_YEARS - 1):
            if rng.uniform() < h[k]:
                n_obs = k + 1
                break
        years = rng.choice(N_YEARS, size=n_obs, replace=False)
        flags = np.zeros(N_YEARS, dtype=bool)
        flags[years] = True
        return flags
    if mechanism.kind == "sel2":
        a = np.asarray(mechanism.a, dtype=float)
        beta = np.asarray(mechanism.beta, dtype=float)
        p = 1.0 / (1.0 + np.exp(-(a + beta * delta_i)))
        return rng.uniform(size=N_YEARS) < p
    if mechanism.kind == "score":
        logits = mechanism.intercept + mechanism.coef * score_dev
        p = 1.0 / (1.0 + np.exp(-logits))
        return rng.uniform(size=N_YEARS) < p
    raise PanelError(f"unknown missingness kind {mechanism.kind!r}")


def apply_missingness(panel, truth, mechanism, seed):
    """Delete scores (and links) from a complete panel per the mechanism.

    Deterministic given ``seed``.  Students whose draw would delete every
    score are redrawn until at least one survives, so every student keeps
    one or more observed scores.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    mu = np.asarray(truth.config.mu, dtype=float)
    records = []
    for rec in panel.students:
        if any(s is None for s in rec.scores):
            raise PanelError("apply_missingness requires a complete panel")
        delta_i = truth.delta[rec.student_id]
        score_dev = np.asarray(rec.scores, dtype=float) - mu
        for _ in range(10000):
            flags = _draw_flags(rng, mechanism, delta_i, score_dev)
            if flags.any():
                break
        else:
            raise PanelError("missingness mechanism kept deleting every score")
        records.append(StudentRecord(
            student_id=rec.student_id,
            scores=tuple(s if f else None for s, f in zip(rec.scores, flags)),
            teacher_links=tuple(
                l if (f or not mechanism.co_delete_links) else None
                for l, f in zip(rec.teacher_links, flags)),
        ))
    return panel_from_records(records, standardization=panel.standardization)


def hazard_count_probs(a, beta, delta):
    """Distribution of the number of observed scores for one latent effect."""
    lp = [selection_loglik(np.array([k]), np.array([delta]),
                           (np.asarray(a, dtype=float), float(beta)))[0]
          for k in range(1, N_YEARS + 1)]
    return np.exp(lp)


def save_truth(truth, path):
    """Persist the truth record as CSV (kind, key, value rows)."""
    cfg = truth.config
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "key", "value"])
        for t in range(N_YEARS):
            writer.writerow(["mu", t + 1, f"{cfg.mu[t]:.6f}"])
            writer.writerow(["tau", t + 1, f"{cfg.tau[t]:.6f}"])
            writer.writerow(["sigma", t + 1, f"{cfg.sigma[t]:.6f}"])
        writer.writerow(["nu", "", f"{cfg.nu:.6f}"])
        alpha = np.asarray(cfg.alpha, dtype=float)
        for t in range(N_YEARS):
            for ts in range(t):
                writer.writerow(["alpha", f"{t + 1},{ts + 1}", f"{alpha[t, ts]:.6f}"])
        for (year, tid), value in sorted(truth.theta.items()):
            writer.writerow(["theta", f"{year},{tid}", f"{value:.6f}"])
        for sid, value in sorted(truth.delta.items()):
            writer.writerow(["delta", sid, f"{value:.6f}"])
