"""Convergence and model-comparison statistics.

The potential scale reduction factor follows the classical (non-split)
between/within chain variance form.  The deviance information criterion is
computed on the score-model log-likelihood conditional on all random
effects: DIC = -4*Lbar + 2*L(mean parameters).  Because the selection
models add a likelihood component the missing-at-random fit lacks, only
the score component enters the DIC so that the criterion stays comparable
across the MAR and selection fits; the pattern mixture model changes the
student-effect structure itself, and its DIC is flagged as not comparable
to the others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .sampler import score_loglik


class DiagnosticsError(Exception):
    pass


def gelman_rubin(chains):
    """Potential scale reduction factor of one parameter.

    Parameters
    ----------
    chains : (n_chains, n_draws) array
        Post-burn-in draws, at least 2 chains of equal length >= 2.

    Returns
    -------
    float
        sqrt(((n-1)/n * W + B/n) / W) with W the mean within-chain sample
        variance and B = n * variance of the chain means.  NaN when the
        within-chain variance is zero (undefined).
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2 or chains.shape[1] < 2:
        raise DiagnosticsError("PSRF needs >= 2 chains with >= 2 draws each")
    n = chains.shape[1]
    w = chains.var(axis=1, ddof=1).mean()
    b = n * chains.mean(axis=1).var(ddof=1)
    if w == 0:
        return float("nan")
    return float(np.sqrt(((n - 1) / n * w + b / n) / w))


def psrf_from_moments(means, variances, n):
    """PSRF from per-chain sample means and variances (vectorized over the
    trailing axes)."""
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if means.shape[0] < 2 or n < 2:
        raise DiagnosticsError("PSRF needs >= 2 chains with >= 2 draws each")
    w = variances.mean(axis=0)
    b = n * means.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(((n - 1) / n * w + b / n) / w)


def split_gelman_rubin(chains):
    """Split-chain variant: each chain contributes its two halves."""
    chains = np.asarray(chains, dtype=float)
    half = chains.shape[1] // 2
    split = np.concatenate([chains[:, :half], chains[:, half:2 * half]], axis=0)
    return gelman_rubin(split)


def convergence_report(archive, threshold=1.05, include_effects=True, split=False):
    """Per-parameter PSRF table with a pass flag at the given threshold.

    Scalars and classroom effects use stored draws; student effects use the
    per-chain moments.  Requires at least two chains.
    """
    if archive.n_chains < 2:
        raise DiagnosticsError("convergence report needs >= 2 chains")
    stat = split_gelman_rubin if split else gelman_rubin
    rows = []
    scalars = archive.all_scalars()
    for i, name in enumerate(archive.scalar_names):
        rows.append((name, stat(scalars[:, :, i])))
    if include_effects:
        th = archive.theta_draws()
        for i, name in enumerate(archive.theta_names()):
            rows.append((name, stat(th[:, :, i])))
        stats = archive.delta_chain_stats()
        if stats and len(stats[0][1]):
            n = stats[0][0]
            means = np.stack([s[1] for s in stats])
            variances = np.stack([s[2] for s in stats])
            rhats = psrf_from_moments(means, variances, n)
            for i, sid in enumerate(archive.student_ids):
                rows.append((f"delta[{sid}]", float(rhats[i])))
    df = pd.DataFrame(rows, columns=["param", "rhat"])
    df["converged"] = df["rhat"] < threshold
    return df


@dataclass(frozen=True)
class DicResult:
    """Deviance information criterion and its two components."""

    model: str
    dic: float
    lbar: float
    l_at_mean: float
    comparable: bool

    def __post_init__(self):
        expected = -4.0 * self.lbar + 2.0 * self.l_at_mean
        if not np.isclose(self.dic, expected, rtol=0, atol=1e-9 * max(1, abs(expected))):
            raise DiagnosticsError("DIC identity violated")


def dic(archive):
    """DIC of a fit from its stored score log-likelihood trace.

    Lbar is the across-chain mean of the per-draw score log-likelihood;
    L(mean) evaluates the same likelihood at the across-chain posterior
    mean of every parameter, random effects included.  The result for a
    pattern mixture fit carries ``comparable=False``.
    """
    trace = archive.loglik_score()
    if trace is None or trace.size == 0:
        raise DiagnosticsError("archive has no log-likelihood trace")
    if archive.design is None:
        raise DiagnosticsError("DIC needs the design the archive was fit on")
    lbar = float(trace.mean())
    state = archive.mean_state()
    l_at_mean = score_loglik(state, archive.design, archive.grouping)
    return DicResult(
        model=archive.spec.model,
        dic=-4.0 * lbar + 2.0 * l_at_mean,
        lbar=lbar,
        l_at_mean=l_at_mean,
        comparable=archive.spec.model != "PMIX",
    )


def compare_dic(result_a, result_b):
    """DIC difference (a - b); refuses pairs involving a pattern mixture fit."""
    if not (result_a.comparable and result_b.comparable):
        raise DiagnosticsError(
            "DIC is not comparable across models with different student-effect "
            "structure (pattern mixture fits)")
    return result_a.dic - result_b.dic
