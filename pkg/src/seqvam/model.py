"""Model specifications, parameter state and selection likelihoods.

Four model families are supported:

* ``MAR``  -- the base sequential multi-membership score model.
* ``SEL``  -- adds a model for the number of observed scores n_i driven by
  the latent student effect, with an ordinal link in the number of scores.
* ``SEL2`` -- adds independent per-year Bernoulli observation indicators
  with year-specific coefficients on the student effect.
* ``PMIX`` -- stratifies annual means and residual variances by response
  pattern group; classroom effects and out-year weights are shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .panel import N_YEARS

MODELS = ("MAR", "SEL", "SEL2", "PMIX")
PARAMETERIZATIONS = ("hazard", "literal")


class ModelError(Exception):
    """Raised for invalid model configuration or sampler preconditions."""


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the (relatively uninformative) priors.

    Annual means and out-year weights get Normal(0, mean_sd^2) priors; the
    component standard deviations get uniform priors on (0, upper); the
    selection coefficients get mean-zero Normal priors with the stated
    variances.
    """

    mean_sd: float = 1000.0
    tau_upper: float = 0.7
    nu_upper: float = 2.0
    sigma_upper: float = 1.0
    sel_coef_var: float = 100.0
    sel2_coef_var: float = 10.0

    def __post_init__(self):
        for name in ("mean_sd", "tau_upper", "nu_upper", "sigma_upper",
                     "sel_coef_var", "sel2_coef_var"):
            if getattr(self, name) <= 0:
                raise ModelError(f"prior bound {name} must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """Which model to fit, plus chain protocol and any pinned blocks.

    ``fix_means``, ``fix_alpha`` and ``fix_variances`` hold those blocks at
    supplied values instead of sampling them (used for the fixed-variance
    closed-form cross-checks); ``fix_sel_beta`` pins the selection slope(s).
    """

    model: str = "MAR"
    priors: PriorSpec = field(default_factory=PriorSpec)
    chains: int = 3
    burn_in: int = 5000
    keep: int = 5000
    thin: int = 1
    selection_parameterization: str = "hazard"
    pattern_threshold: int = 25
    store_student_draws: bool = False
    fix_means: object = None          # (5,) or (n_groups, 5)
    fix_alpha: object = None          # (5, 5) lower triangular, unit diagonal
    fix_variances: object = None      # VarianceProfile
    fix_sel_beta: object = None       # scalar (SEL) or length-5 (SEL2)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ModelError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.selection_parameterization not in PARAMETERIZATIONS:
            raise ModelError(
                f"unknown selection parameterization {self.selection_parameterization!r}")
        if self.chains < 1 or self.burn_in < 0 or self.keep < 1 or self.thin < 1:
            raise ModelError("chain protocol values out of range")
        if self.keep % self.thin:
            raise ModelError("keep must be a multiple of thin")

    @property
    def has_selection(self):
        return self.model in ("SEL", "SEL2")

    @property
    def n_retained(self):
        return self.keep // self.thin

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class ParameterState:
    """One full set of model unknowns.

    ``mu`` and ``sigma`` are 5-vectors for MAR/SEL/SEL2 and (n_groups, 5)
    arrays for PMIX (NaN in non-estimated cells); ``nu`` is a scalar or a
    per-group vector (NaN for single-score groups).  ``alpha`` is the 5x5
    lower-triangular weight matrix with unit diagonal.  ``sel_a`` /
    ``sel_beta`` are present only for the selection models.
    """

    model: str
    mu: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    delta: np.ndarray
    tau: np.ndarray
    nu: object
    sigma: np.ndarray
    sel_a: np.ndarray = None
    sel_beta: object = None

    def copy(self):
        return ParameterState(
            model=self.model,
            mu=np.array(self.mu), alpha=np.array(self.alpha),
            theta=np.array(self.theta), delta=np.array(self.delta),
            tau=np.array(self.tau), nu=np.copy(self.nu), sigma=np.array(self.sigma),
            sel_a=None if self.sel_a is None else np.array(self.sel_a),
            sel_beta=None if self.sel_beta is None else np.copy(self.sel_beta),
        )


# ---------------------------------------------------------------------------
# Selection likelihoods


def _log_expit(x):
    return -np.logaddexp(0.0, -x)


def selection_loglik(n_or_r, delta, sel_params, parameterization="hazard"):
    """Per-student log probability of the observation pattern.

    Parameters
    ----------
    n_or_r : array
        For the number-of-scores model, the vector of per-student counts
        n_i in 1..5.  For the per-year model, an (n_students, 5) 0/1 array
        of observation indicators.
    delta : (n_students,) array
        Latent student effects.
    sel_params : (a, beta)
        ``a`` of length 4 with scalar ``beta`` selects the number-of-scores
        model; ``a`` and ``beta`` both of length 5 select the per-year
        model (which ignores ``parameterization``).
    parameterization : {"hazard", "literal"}
        ``hazard`` treats logistic(a_k + beta*delta) as the probability of
        stopping at k given k scores were reached, which is always a valid
        distribution.  ``literal`` reads logistic(a_k + beta*delta) as the
        cumulative probability Pr(n <= k); nonmonotone intercepts can then
        produce nonpositive cell probabilities, reported as -inf.
    """
    a, beta = sel_params
    a = np.asarray(a, dtype=float)
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if np.ndim(beta) > 0:
        r = np.atleast_2d(np.asarray(n_or_r, dtype=float))
        beta = np.asarray(beta, dtype=float)
        x = a[None, :] + beta[None, :] * delta[:, None]
        return (r * _log_expit(x) + (1.0 - r) * _log_expit(-x)).sum(axis=1)

    n = np.atleast_1d(np.asarray(n_or_r, dtype=int))
    if np.any((n < 1) | (n > N_YEARS)):
        raise ModelError("observed-score counts must lie in 1..5")
    x = a[None, :] + beta * delta[:, None]                   # (n_students, 4)
    if parameterization == "hazard":
        log_h = _log_expit(x)
        log_1mh = _log_expit(-x)
        prefix = np.concatenate(
            [np.zeros((len(delta), 1)), np.cumsum(log_1mh, axis=1)], axis=1)
        rows = np.arange(len(delta))
        out = prefix[rows, n - 1]
        stopped = n <= N_YEARS - 1
        out = out + np.where(stopped, log_h[rows, np.minimum(n, N_YEARS - 1) - 1], 0.0)
        return out
    if parameterization == "literal":
        from scipy.special import expit
        cum = np.concatenate(
            [np.zeros((len(delta), 1)), expit(x), np.ones((len(delta), 1))], axis=1)
        rows = np.arange(len(delta))
        cell = cum[rows, n] - cum[rows, n - 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(cell > 0, np.log(np.maximum(cell, 1e-300)), -np.inf)
        return out
    raise ModelError(f"unknown parameterization {parameterization!r}")
