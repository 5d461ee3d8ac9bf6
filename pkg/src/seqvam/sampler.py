"""Metropolis-within-Gibbs samplers for the four model families.

Each sweep updates the location block (annual means, classroom effects, a
per-year mean/effect recentering shift, and out-year weights) from exact
Gaussian full conditionals, then the student
effects (a Gibbs draw under MAR/PMIX, a per-student Metropolis step with
the Gibbs conditional as proposal under the selection models), then the
variance components from their bounded conditionals, and for the selection
models finishes with random-walk Metropolis steps on the selection
coefficients.  Everything is deterministic given the seed.
"""

from __future__ import annotations

import numpy as np

from .archive import ChainArchive, ChainDraws
from .model import ModelError, ModelSpec, ParameterState, selection_loglik
from .panel import N_YEARS, pattern_of

_MEAN_EPS = 1e-300


def sample_bounded_sd(rng, m, ssq, upper, current, max_reject=100):
    """Draw an SD with conditional density prop. to sd^-m * exp(-ssq/(2 sd^2))
    on (0, upper).

    With no attached observations (m = 0) this is the uniform prior.  The
    draw first tries the conjugate inverse-gamma form with rejection of
    values outside the support, then falls back to shrinking-interval slice
    sampling from ``current`` after ``max_reject`` failures.
    """
    if m == 0:
        return rng.uniform(0.0, upper)
    ssq = max(float(ssq), 1e-12)
    shape = (m - 1) / 2.0
    if shape > 0:
        for _ in range(max_reject):
            v = (ssq / 2.0) / rng.standard_gamma(shape)
            if v < upper * upper:
                return float(np.sqrt(v))

    def logf(x):
        return -m * np.log(x) - ssq / (2.0 * x * x)

    x0 = min(max(float(current), 1e-9), upper * (1 - 1e-9))
    level = logf(x0) + np.log(rng.uniform())
    lo, hi = 0.0, upper
    for _ in range(1000):
        x = rng.uniform(lo, hi)
        if logf(x) >= level:
            return x
        if x < x0:
            lo = x
        else:
            hi = x
    return x0


class _Sampler:
    """State and cached index structure for one chain."""

    def __init__(self, spec, panel, design, grouping, rng):
        self.spec = spec
        self.panel = panel
        self.design = design
        self.grouping = grouping
        self.rng = rng
        pr = spec.priors
        self.mean_var = pr.mean_sd ** 2

        d = design
        self.y = d.y
        self.student = d.student
        self.year = d.year
        self.teff = d.teacher
        self.mask = d.teacher >= 0
        self.n_obs = d.n_obs
        self.n_students = d.n_students
        self.n_eff = d.n_effects
        self.year_slices = [d.effects_of_year(t) for t in range(N_YEARS)]
        self.year_idx = [np.flatnonzero(self.year == t) for t in range(N_YEARS)]
        self.alpha_idx = {
            (t, ts): np.flatnonzero((self.year == t) & self.mask[:, ts])
            for t in range(N_YEARS) for ts in range(t)
        }

        if spec.model == "PMIX":
            if grouping is None:
                raise ModelError("PMIX requires a pattern grouping")
            self.n_groups = grouping.n_groups
            self.group_of_student = np.array(
                [grouping.group_of(pattern_of(r)) for r in panel.students], dtype=np.intp)
            self.est_mask = np.array([g.year_flags for g in grouping.groups], dtype=bool)
            self.has_delta_group = np.array(
                [not g.single_score for g in grouping.groups], dtype=bool)
            self.has_delta = self.has_delta_group[self.group_of_student] \
                if self.n_students else np.zeros(0, dtype=bool)
            go = self.group_of_student[self.student] if self.n_obs else np.zeros(0, dtype=np.intp)
            self.cell = go * N_YEARS + self.year
            self.cell_counts = np.bincount(self.cell, minlength=self.n_groups * N_YEARS)
            self.delta_group_counts = np.bincount(
                self.group_of_student[self.has_delta], minlength=self.n_groups)
        if spec.model == "SEL":
            self.n_i = np.bincount(self.student, minlength=self.n_students).astype(int)
        if spec.model == "SEL2":
            self.r_flags = np.array(
                [r.response_flags for r in panel.students], dtype=float
            ).reshape(self.n_students, N_YEARS)

        self._init_state()
        self._init_selection_steps()

    # -- initialization ----------------------------------------------------

    def _init_state(self):
        spec = self.spec
        pr = spec.priors
        fixed = spec.fix_variances
        if spec.model == "PMIX":
            mu = np.full((self.n_groups, N_YEARS), np.nan)
            sums = np.bincount(self.cell, weights=self.y,
                               minlength=self.n_groups * N_YEARS)
            with np.errstate(invalid="ignore"):
                cellmeans = np.where(self.cell_counts > 0,
                                     sums / np.maximum(self.cell_counts, 1), 0.0)
            mu[self.est_mask] = cellmeans.reshape(self.n_groups, N_YEARS)[self.est_mask]
            sigma = np.full((self.n_groups, N_YEARS), np.nan)
            sigma[self.est_mask] = 0.5 * pr.sigma_upper if fixed is None else np.sqrt(
                np.broadcast_to(fixed.sigma2, (self.n_groups, N_YEARS)))[self.est_mask]
            nu = np.full(self.n_groups, np.nan)
            nu[self.has_delta_group] = 0.5 * pr.nu_upper if fixed is None \
                else float(np.sqrt(fixed.nu2))
        else:
            mu = np.zeros(N_YEARS)
            for t in range(N_YEARS):
                idx = self.year_idx[t]
                mu[t] = self.y[idx].mean() if len(idx) else 0.0
            sigma = np.full(N_YEARS, 0.5 * pr.sigma_upper) if fixed is None \
                else np.sqrt(np.asarray(fixed.sigma2, dtype=float))
            nu = 0.5 * pr.nu_upper if fixed is None else float(np.sqrt(fixed.nu2))
        if spec.fix_means is not None:
            mu = np.array(spec.fix_means, dtype=float)
        tau = np.full(N_YEARS, 0.5 * pr.tau_upper) if fixed is None \
            else np.sqrt(np.asarray(fixed.tau2, dtype=float))
        alpha = np.eye(N_YEARS) if spec.fix_alpha is None \
            else np.array(spec.fix_alpha, dtype=float)

        sel_a = sel_beta = None
        if spec.model == "SEL":
            sel_a = np.zeros(N_YEARS - 1)
            sel_beta = 0.0 if spec.fix_sel_beta is None else float(spec.fix_sel_beta)
        elif spec.model == "SEL2":
            sel_a = np.zeros(N_YEARS)
            sel_beta = np.zeros(N_YEARS) if spec.fix_sel_beta is None \
                else np.array(spec.fix_sel_beta, dtype=float)

        self.state = ParameterState(
            model=spec.model, mu=mu, alpha=alpha,
            theta=np.zeros(self.n_eff), delta=np.zeros(self.n_students),
            tau=tau, nu=nu, sigma=sigma, sel_a=sel_a, sel_beta=sel_beta)

    def _init_selection_steps(self):
        spec = self.spec
        if not spec.has_selection:
            self.sel_free = []
            return
        n_a = len(self.state.sel_a)
        n_b = 1 if spec.model == "SEL" else N_YEARS
        self.sel_free = list(range(n_a))
        if spec.fix_sel_beta is None:
            self.sel_free += list(range(n_a, n_a + n_b))
        self.sel_steps = np.full(n_a + n_b, 0.2)
        self.sel_acc = np.zeros(n_a + n_b)
        self.sel_att = np.zeros(n_a + n_b)
        self.delta_acc = 0
        self.delta_att = 0

    # -- cached per-sweep quantities ---------------------------------------

    def _refresh(self):
        s = self.state
        self.theta_pad = np.append(s.theta, 0.0)
        self.wmat = s.alpha[self.year] * self.mask
        self.tmat = self.theta_pad[self.teff]
        self.contrib = (self.tmat * self.wmat).sum(axis=1)
        if self.spec.model == "PMIX":
            self.mu_obs = s.mu.ravel()[self.cell]
            self.sig2_obs = (s.sigma.ravel() ** 2)[self.cell]
        else:
            self.mu_obs = s.mu[self.year]
            self.sig2_obs = (s.sigma ** 2)[self.year]

    # -- location block ----------------------------------------------------

    def _update_mu(self):
        if self.spec.fix_means is not None:
            return
        s = self.state
        rng = self.rng
        resid = self.y - self.contrib - s.delta[self.student]
        if self.spec.model == "PMIX":
            ncells = self.n_groups * N_YEARS
            sums = np.bincount(self.cell, weights=resid / self.sig2_obs, minlength=ncells) \
                if self.n_obs else np.zeros(ncells)
            prec_data = np.bincount(self.cell, weights=1.0 / self.sig2_obs, minlength=ncells) \
                if self.n_obs else np.zeros(ncells)
            prec = 1.0 / self.mean_var + prec_data
            mean = sums / prec
            draws = mean + rng.standard_normal(ncells) / np.sqrt(prec)
            flat = s.mu.ravel()
            est = self.est_mask.ravel()
            flat[est] = draws[est]
            self.mu_obs = flat[self.cell]
        else:
            for t in range(N_YEARS):
                idx = self.year_idx[t]
                sig2 = s.sigma[t] ** 2
                prec = 1.0 / self.mean_var + len(idx) / sig2
                mean = (resid[idx].sum() / sig2) / prec
                s.mu[t] = mean + rng.standard_normal() / np.sqrt(prec)
            self.mu_obs = s.mu[self.year]

    def _update_theta(self):
        s = self.state
        rng = self.rng
        base = self.y - self.mu_obs - s.delta[self.student]
        for ts in range(N_YEARS):
            sl = self.year_slices[ts]
            n_t = sl.stop - sl.start
            if n_t == 0:
                continue
            c = self.wmat[:, ts]
            excl = self.contrib - self.tmat[:, ts] * c
            g = self.teff[:, ts]
            valid = self.mask[:, ts]
            r = base - excl
            w2 = np.bincount(g[valid], weights=(c * c / self.sig2_obs)[valid],
                             minlength=self.n_eff) if self.n_obs else np.zeros(self.n_eff)
            wr = np.bincount(g[valid], weights=(c * r / self.sig2_obs)[valid],
                             minlength=self.n_eff) if self.n_obs else np.zeros(self.n_eff)
            prec = 1.0 / s.tau[ts] ** 2 + w2[sl]
            if np.any(prec <= 0):
                raise ModelError("nonpositive conditional precision in classroom update")
            mean = wr[sl] / prec
            s.theta[sl] = mean + rng.standard_normal(n_t) / np.sqrt(prec)
            self.theta_pad[:-1] = s.theta
            self.tmat[:, ts] = self.theta_pad[self.teff[:, ts]]
            self.contrib = excl + self.tmat[:, ts] * c

    def _update_recenter(self):
        """Exact Gibbs shift along (mu_t + e, theta_t. - e) for each year.

        The annual mean and the mean of that year's classroom effects are
        near-confounded -- only the N(0, tau_t^2) prior separates them -- so
        the single-site draws random-walk through that direction and mix
        slowly when classrooms are data-rich.  The shift enters every
        residual linearly (it cancels exactly in current-year rows with a
        known classroom and survives with weight alpha[t', t] in later-year
        rows), so its full conditional is Gaussian and the move is an exact
        Gibbs step on the reparameterized coordinate.
        """
        if self.spec.fix_means is not None:
            return
        s = self.state
        rng = self.rng
        is_pmix = self.spec.model == "PMIX"
        for t in range(N_YEARS):
            sl = self.year_slices[t]
            n_t = sl.stop - sl.start
            if n_t == 0:
                continue
            # residual change per unit shift: -1 for year-t rows (through
            # mu) plus the row's theta_t coefficient where the link is known
            c = self.wmat[:, t] - (self.year == t)
            r = self.y - self.mu_obs - self.contrib - s.delta[self.student]
            if is_pmix:
                cells = self.est_mask[:, t]
                mu_sum = float(s.mu[cells, t].sum())
                n_mu = int(cells.sum())
            else:
                mu_sum = float(s.mu[t])
                n_mu = 1
            prec = (float((c * c / self.sig2_obs).sum())
                    + n_t / s.tau[t] ** 2 + n_mu / self.mean_var)
            lin = (-float((c * r / self.sig2_obs).sum())
                   + float(s.theta[sl].sum()) / s.tau[t] ** 2
                   - mu_sum / self.mean_var)
            e = lin / prec + rng.standard_normal() / np.sqrt(prec)
            if is_pmix:
                s.mu[cells, t] += e
                self.mu_obs = s.mu.ravel()[self.cell]
            else:
                s.mu[t] += e
                self.mu_obs = s.mu[self.year]
            s.theta[sl] -= e
            self.theta_pad[:-1] = s.theta
            new_col = self.theta_pad[self.teff[:, t]]
            self.contrib += (new_col - self.tmat[:, t]) * self.wmat[:, t]
            self.tmat[:, t] = new_col

    def _update_alpha(self):
        if self.spec.fix_alpha is not None:
            return
        s = self.state
        rng = self.rng
        base = self.y - self.mu_obs - s.delta[self.student]
        for (t, ts), idx in self.alpha_idx.items():
            cur = s.alpha[t, ts]
            if len(idx) == 0:
                new = rng.normal(0.0, np.sqrt(self.mean_var))
                s.alpha[t, ts] = new
                continue
            x = self.tmat[idx, ts]
            r = base[idx] - (self.contrib[idx] - x * cur)
            sig2 = self.sig2_obs[idx]
            prec = 1.0 / self.mean_var + (x * x / sig2).sum()
            mean = ((x * r / sig2).sum()) / prec
            new = mean + rng.standard_normal() / np.sqrt(prec)
            s.alpha[t, ts] = new
            self.contrib[idx] += x * (new - cur)
            self.wmat[idx, ts] = new

    def _delta_conditional(self):
        """Gaussian full conditional of the student effects given the rest."""
        s = self.state
        r = self.y - self.mu_obs - self.contrib
        sw = np.bincount(self.student, weights=1.0 / self.sig2_obs,
                         minlength=self.n_students) if self.n_obs else np.zeros(self.n_students)
        sr = np.bincount(self.student, weights=r / self.sig2_obs,
                         minlength=self.n_students) if self.n_obs else np.zeros(self.n_students)
        if self.spec.model == "PMIX":
            prior_prec = np.zeros(self.n_students)
            nu = np.where(self.has_delta_group, self.state.nu, 1.0)
            prior_prec[self.has_delta] = (1.0 / nu[self.group_of_student] ** 2)[self.has_delta]
        else:
            prior_prec = np.full(self.n_students, 1.0 / s.nu ** 2)
        prec = prior_prec + sw
        mean = np.where(prec > 0, sr / np.maximum(prec, _MEAN_EPS), 0.0)
        return mean, prec

    def _update_delta_gibbs(self):
        s = self.state
        mean, prec = self._delta_conditional()
        draw = mean + self.rng.standard_normal(self.n_students) / np.sqrt(
            np.maximum(prec, _MEAN_EPS))
        if self.spec.model == "PMIX":
            draw[~self.has_delta] = 0.0
        s.delta = draw

    def _sel_loglik(self, delta):
        s = self.state
        if self.spec.model == "SEL":
            return selection_loglik(self.n_i, delta, (s.sel_a, s.sel_beta),
                                    self.spec.selection_parameterization)
        return selection_loglik(self.r_flags, delta, (s.sel_a, s.sel_beta))

    def _update_delta_mh(self, record_acceptance):
        s = self.state
        rng = self.rng
        if self.n_students == 0:
            return
        mean, prec = self._delta_conditional()
        prop = mean + rng.standard_normal(self.n_students) / np.sqrt(prec)
        # independence proposal from the score-model conditional: the
        # Gaussian factors cancel, leaving the selection-likelihood ratio
        log_ratio = self._sel_loglik(prop) - self._sel_loglik(s.delta)
        accept = np.log(rng.uniform(size=self.n_students)) < log_ratio
        s.delta = np.where(accept, prop, s.delta)
        if record_acceptance:
            self.delta_acc += int(accept.sum())
            self.delta_att += self.n_students

    # -- variance block ----------------------------------------------------

    def _update_variances(self):
        if self.spec.fix_variances is not None:
            return
        s = self.state
        pr = self.spec.priors
        rng = self.rng
        for t in range(N_YEARS):
            sl = self.year_slices[t]
            m = sl.stop - sl.start
            ssq = float((s.theta[sl] ** 2).sum())
            s.tau[t] = sample_bounded_sd(rng, m, ssq, pr.tau_upper, s.tau[t])
        if self.spec.model == "PMIX":
            ssq_g = np.bincount(self.group_of_student[self.has_delta],
                                weights=s.delta[self.has_delta] ** 2,
                                minlength=self.n_groups) if self.n_students else \
                np.zeros(self.n_groups)
            for g in range(self.n_groups):
                if not self.has_delta_group[g]:
                    continue
                s.nu[g] = sample_bounded_sd(
                    rng, int(self.delta_group_counts[g]), float(ssq_g[g]),
                    pr.nu_upper, s.nu[g])
        else:
            s.nu = sample_bounded_sd(rng, self.n_students, float((s.delta ** 2).sum()),
                                     pr.nu_upper, s.nu)
        resid = self.y - self.mu_obs - self.contrib - s.delta[self.student]
        if self.spec.model == "PMIX":
            ncells = self.n_groups * N_YEARS
            ssq_c = np.bincount(self.cell, weights=resid ** 2, minlength=ncells) \
                if self.n_obs else np.zeros(ncells)
            flat = s.sigma.ravel()
            for c in np.flatnonzero(self.est_mask.ravel()):
                flat[c] = sample_bounded_sd(rng, int(self.cell_counts[c]),
                                            float(ssq_c[c]), pr.sigma_upper, flat[c])
            self.sig2_obs = (flat ** 2)[self.cell]
        else:
            for t in range(N_YEARS):
                idx = self.year_idx[t]
                s.sigma[t] = sample_bounded_sd(rng, len(idx), float((resid[idx] ** 2).sum()),
                                               pr.sigma_upper, s.sigma[t])
            self.sig2_obs = (s.sigma ** 2)[self.year]

    # -- selection coefficients --------------------------------------------

    def _sel_param_vector(self):
        s = self.state
        if self.spec.model == "SEL":
            return np.append(s.sel_a, s.sel_beta)
        return np.concatenate([s.sel_a, s.sel_beta])

    def _set_sel_params(self, vec):
        s = self.state
        n_a = len(s.sel_a)
        s.sel_a = vec[:n_a].copy()
        if self.spec.model == "SEL":
            s.sel_beta = float(vec[n_a])
        else:
            s.sel_beta = vec[n_a:].copy()

    def _sel_prior_var(self, k):
        pr = self.spec.priors
        return pr.sel_coef_var if self.spec.model == "SEL" else pr.sel2_coef_var

    def _update_sel_params(self, adapting, record_acceptance):
        s = self.state
        rng = self.rng
        if self.n_students == 0:
            # likelihood term vanishes: the conditional is the prior itself
            vec = self._sel_param_vector()
            for k in self.sel_free:
                vec[k] = rng.normal(0.0, np.sqrt(self._sel_prior_var(k)))
            self._set_sel_params(vec)
            return
        vec = self._sel_param_vector()
        cur_ll = float(self._sel_loglik(s.delta).sum())
        for k in self.sel_free:
            old = vec[k]
            vec[k] = old + self.sel_steps[k] * rng.standard_normal()
            self._set_sel_params(vec)
            new_ll = float(self._sel_loglik(s.delta).sum())
            pv = self._sel_prior_var(k)
            log_r = new_ll - cur_ll + (old * old - vec[k] * vec[k]) / (2.0 * pv)
            if np.log(rng.uniform()) < log_r:
                cur_ll = new_ll
                accepted = True
            else:
                vec[k] = old
                self._set_sel_params(vec)
                accepted = False
            if adapting or record_acceptance:
                self.sel_att[k] += 1
                self.sel_acc[k] += accepted

    def _adapt_sel_steps(self):
        att = np.maximum(self.sel_att, 1.0)
        rate = self.sel_acc / att
        for k in self.sel_free:
            if self.sel_att[k] == 0:
                continue
            if rate[k] < 0.2:
                self.sel_steps[k] *= 0.7
            elif rate[k] > 0.5:
                self.sel_steps[k] *= 1.4
        self.sel_steps = np.clip(self.sel_steps, 1e-4, 100.0)
        self.sel_acc[:] = 0.0
        self.sel_att[:] = 0.0

    # -- sweep and likelihood ----------------------------------------------

    def sweep(self, adapting=False, record_acceptance=False):
        self._refresh()
        self._update_mu()
        self._update_theta()
        self._update_recenter()
        self._update_alpha()
        if self.spec.has_selection:
            self._update_delta_mh(record_acceptance)
        else:
            self._update_delta_gibbs()
        self._update_variances()
        if self.spec.has_selection:
            self._update_sel_params(adapting, record_acceptance)
        if not np.all(np.isfinite(self.contrib)):
            raise ModelError("non-finite fitted values during sweep")

    def logliks(self):
        """(score loglik, selection loglik or None) at the current state."""
        s = self.state
        resid = self.y - self.mu_obs - self.contrib - s.delta[self.student]
        score = float(-0.5 * (np.log(2.0 * np.pi * self.sig2_obs)
                              + resid ** 2 / self.sig2_obs).sum())
        sel = float(self._sel_loglik(s.delta).sum()) if self.spec.has_selection else None
        return score, sel


def run_chain(spec, panel, design, grouping=None, seed=0):
    """Run one chain and return its draws.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``.  The run is
    fully deterministic given the seed: burn-in sweeps with step-size
    adaptation for the selection coefficients, then ``spec.keep`` retained
    sweeps (adaptation frozen) recorded every ``spec.thin``-th sweep.
    """
    if spec.model == "PMIX" and grouping is None:
        raise ModelError("PMIX requires a pattern grouping")
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(seq))
    sampler = _Sampler(spec, panel, design, grouping, rng)

    adapt_window = 50
    for it in range(spec.burn_in):
        sampler.sweep(adapting=spec.has_selection)
        if spec.has_selection and (it + 1) % adapt_window == 0:
            sampler._adapt_sel_steps()
    if spec.has_selection:
        sampler.sel_acc[:] = 0.0
        sampler.sel_att[:] = 0.0

    n_ret = spec.n_retained
    draws = ChainDraws.allocate(spec, design, grouping, n_ret)
    k = 0
    for it in range(spec.keep):
        sampler.sweep(record_acceptance=True)
        if (it + 1) % spec.thin == 0:
            score, sel = sampler.logliks()
            draws.record(k, sampler.state, score, sel)
            k += 1
    draws.finalize(sampler, seq)
    return draws


def run_chains(spec, panel, design, grouping=None, seed=0):
    """Run ``spec.chains`` independent chains and collect them in an archive.

    Per-chain seeds derive from ``SeedSequence(seed).spawn``; adding chains
    never perturbs the streams of existing ones.
    """
    root = np.random.SeedSequence(seed)
    children = root.spawn(spec.chains)
    chains = [run_chain(spec, panel, design, grouping, child) for child in children]
    return ChainArchive(spec, panel, design, grouping, chains, seed)


# ---------------------------------------------------------------------------
# Conditional log-likelihood (stand-alone evaluator)


def conditional_loglik(state, design, grouping=None, parameterization="hazard"):
    """Log-likelihood of the observed scores at a parameter state, plus the
    selection-model term when the state carries selection coefficients.

    The score part conditions on all random effects: a Gaussian log density
    per observed score with the model's fitted mean and annual (or
    pattern-group) residual variance.
    """
    score = score_loglik(state, design, grouping)
    if state.sel_a is None:
        return score
    if state.model == "SEL":
        n_i = np.bincount(design.student, minlength=design.n_students).astype(int)
        sel = selection_loglik(n_i, state.delta, (state.sel_a, state.sel_beta),
                               parameterization)
    else:
        r = np.array([rec.response_flags for rec in design.panel.students],
                     dtype=float).reshape(design.n_students, N_YEARS)
        sel = selection_loglik(r, state.delta, (state.sel_a, state.sel_beta))
    return score + float(sel.sum())


def score_loglik(state, design, grouping=None):
    """Gaussian log density of the observed scores given all parameters."""
    mask = design.teacher >= 0
    theta_pad = np.append(state.theta, 0.0)
    contrib = (theta_pad[design.teacher] * (state.alpha[design.year] * mask)).sum(axis=1)
    if state.model == "PMIX":
        if grouping is None:
            raise ModelError("PMIX loglik requires the pattern grouping")
        gos = np.array([grouping.group_of(pattern_of(r)) for r in design.panel.students],
                       dtype=np.intp)
        cell = gos[design.student] * N_YEARS + design.year
        mu_obs = state.mu.ravel()[cell]
        sig2 = (state.sigma.ravel() ** 2)[cell]
    else:
        mu_obs = state.mu[design.year]
        sig2 = (state.sigma ** 2)[design.year]
    resid = design.y - mu_obs - contrib - state.delta[design.student]
    return float(-0.5 * (np.log(2.0 * np.pi * sig2) + resid ** 2 / sig2).sum())
