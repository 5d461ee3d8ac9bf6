"""Storage of retained MCMC draws and posterior summaries.

Scalar parameters and classroom effects are stored draw by draw.  Student
effects are summarized by per-chain running moments by default (a full
per-draw store is available via ``ModelSpec.store_student_draws``), which
is sufficient for posterior means/SDs, convergence statistics and the DIC
evaluation at the posterior mean.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np
import pandas as pd

from .model import ModelSpec, ParameterState, PriorSpec
from .panel import N_YEARS


def scalar_layout(spec, grouping=None):
    """Names and state-array extractors for the model's scalar parameters."""
    names = []
    if spec.model == "PMIX":
        est = np.array([g.year_flags for g in grouping.groups], dtype=bool)
        has_delta = [not g.single_score for g in grouping.groups]
        for g in range(len(grouping.groups)):
            for t in range(N_YEARS):
                if est[g, t]:
                    names.append(f"mu[g={g + 1},t={t + 1}]")
    else:
        names += [f"mu[{t + 1}]" for t in range(N_YEARS)]
    names += [f"alpha[{t + 1},{ts + 1}]" for t in range(N_YEARS) for ts in range(t)]
    names += [f"tau[{t + 1}]" for t in range(N_YEARS)]
    if spec.model == "PMIX":
        names += [f"nu[g={g + 1}]" for g in range(len(grouping.groups)) if has_delta[g]]
        for g in range(len(grouping.groups)):
            for t in range(N_YEARS):
                if est[g, t]:
                    names.append(f"sigma[g={g + 1},t={t + 1}]")
    else:
        names.append("nu")
        names += [f"sigma[{t + 1}]" for t in range(N_YEARS)]
    if spec.model == "SEL":
        names += [f"a[{k + 1}]" for k in range(N_YEARS - 1)] + ["beta"]
    elif spec.model == "SEL2":
        names += [f"a[{t + 1}]" for t in range(N_YEARS)]
        names += [f"beta[{t + 1}]" for t in range(N_YEARS)]
    return names


def scalar_vector(state, spec, grouping=None):
    """Flatten a state's scalar parameters in the ``scalar_layout`` order."""
    parts = []
    alpha_flat = [state.alpha[t, ts] for t in range(N_YEARS) for ts in range(t)]
    if spec.model == "PMIX":
        est = np.array([g.year_flags for g in grouping.groups], dtype=bool)
        has_delta = np.array([not g.single_score for g in grouping.groups], dtype=bool)
        parts.append(state.mu[est])
        parts.append(alpha_flat)
        parts.append(state.tau)
        parts.append(np.asarray(state.nu)[has_delta])
        parts.append(state.sigma[est])
    else:
        parts.append(state.mu)
        parts.append(alpha_flat)
        parts.append(state.tau)
        parts.append([state.nu])
        parts.append(state.sigma)
    if spec.model == "SEL":
        parts.append(state.sel_a)
        parts.append([state.sel_beta])
    elif spec.model == "SEL2":
        parts.append(state.sel_a)
        parts.append(state.sel_beta)
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


class ChainDraws:
    """Retained draws of a single chain."""

    def __init__(self, spec, grouping, n_ret, n_eff, n_students):
        self.spec = spec
        self.grouping = grouping
        self.scalar_names = scalar_layout(spec, grouping)
        self.scalars = np.empty((n_ret, len(self.scalar_names)))
        self.theta = np.empty((n_ret, n_eff))
        self.delta_sum = np.zeros(n_students)
        self.delta_sumsq = np.zeros(n_students)
        self.delta_draws = (np.empty((n_ret, n_students))
                            if spec.store_student_draws else None)
        self.n_recorded = 0
        self.loglik_score = np.empty(n_ret)
        self.loglik_sel = np.empty(n_ret) if spec.has_selection else None
        self._state_sums = None
        self.accept_delta = None
        self.accept_sel = None
        self.sel_steps = None
        self.seed_entropy = None
        self.spawn_key = None

    @classmethod
    def allocate(cls, spec, design, grouping, n_ret):
        return cls(spec, grouping, n_ret, design.n_effects, design.n_students)

    def record(self, k, state, score_ll, sel_ll):
        self.scalars[k] = scalar_vector(state, self.spec, self.grouping)
        self.theta[k] = state.theta
        self.delta_sum += state.delta
        self.delta_sumsq += state.delta ** 2
        if self.delta_draws is not None:
            self.delta_draws[k] = state.delta
        self.loglik_score[k] = score_ll
        if self.loglik_sel is not None:
            self.loglik_sel[k] = sel_ll
        self.n_recorded = k + 1
        if self._state_sums is None:
            self._state_sums = state.copy()
            self._zero_sums()
        self._accumulate(state)

    def _zero_sums(self):
        s = self._state_sums
        for name in ("mu", "alpha", "theta", "delta", "tau", "sigma"):
            getattr(s, name)[...] = 0.0
        s.nu = np.zeros_like(np.asarray(s.nu, dtype=float))
        if s.sel_a is not None:
            s.sel_a = np.zeros_like(s.sel_a)
            s.sel_beta = np.zeros_like(np.asarray(s.sel_beta, dtype=float))

    def _accumulate(self, state):
        s = self._state_sums
        for name in ("mu", "alpha", "theta", "delta", "tau", "sigma"):
            arr = getattr(s, name)
            arr += np.nan_to_num(getattr(state, name)) if name in ("mu", "sigma") \
                else getattr(state, name)
        s.nu = s.nu + np.nan_to_num(np.asarray(state.nu, dtype=float))
        if s.sel_a is not None:
            s.sel_a = s.sel_a + state.sel_a
            s.sel_beta = s.sel_beta + np.asarray(state.sel_beta, dtype=float)

    def finalize(self, sampler, seed_seq):
        self.seed_entropy = seed_seq.entropy
        self.spawn_key = seed_seq.spawn_key
        if self.spec.has_selection:
            self.accept_delta = (sampler.delta_acc / sampler.delta_att
                                 if sampler.delta_att else None)
            att = np.maximum(sampler.sel_att, 1.0)
            self.accept_sel = sampler.sel_acc / att
            self.sel_steps = sampler.sel_steps.copy()

    def mean_state(self):
        """Per-chain posterior mean of every parameter as a ParameterState."""
        n = self.n_recorded
        s = self._state_sums
        mean = s.copy()
        for name in ("mu", "alpha", "theta", "delta", "tau", "sigma"):
            getattr(mean, name)[...] = getattr(s, name) / n
        mean.nu = np.asarray(s.nu, dtype=float) / n
        if self.spec.model != "PMIX":
            mean.nu = float(mean.nu)
        if s.sel_a is not None:
            mean.sel_a = s.sel_a / n
            mean.sel_beta = np.asarray(s.sel_beta, dtype=float) / n
            if self.spec.model == "SEL":
                mean.sel_beta = float(mean.sel_beta)
        return mean

    def delta_stats(self):
        """(n, mean, variance) of the student-effect draws in this chain."""
        n = self.n_recorded
        mean = self.delta_sum / n
        var = np.maximum(self.delta_sumsq / n - mean ** 2, 0.0) * n / max(n - 1, 1)
        return n, mean, var


class ChainArchive:
    """Post-burn-in draws of all chains of one model fit."""

    def __init__(self, spec, panel, design, grouping, chains, seed):
        self.spec = spec
        self.panel = panel
        self.design = design
        self.grouping = grouping
        self.chains = chains
        self.seed = seed
        self.effect_keys = list(design.effect_keys) if design is not None else []
        self.student_ids = list(design.student_ids) if design is not None else []
        self.scalar_names = chains[0].scalar_names

    @property
    def n_chains(self):
        return len(self.chains)

    @property
    def n_retained(self):
        return self.chains[0].n_recorded

    def scalar_draws(self, name):
        """(n_chains, n_retained) draws of one named scalar parameter."""
        i = self.scalar_names.index(name)
        return np.stack([c.scalars[:, i] for c in self.chains])

    def all_scalars(self):
        """(n_chains, n_retained, n_scalars) array."""
        return np.stack([c.scalars for c in self.chains])

    def theta_draws(self):
        return np.stack([c.theta for c in self.chains])

    def delta_chain_stats(self):
        return [c.delta_stats() for c in self.chains]

    def loglik_score(self):
        return np.stack([c.loglik_score for c in self.chains])

    def loglik_selection(self):
        if self.chains[0].loglik_sel is None:
            return None
        return np.stack([c.loglik_sel for c in self.chains])

    def mean_state(self):
        """Across-chain posterior mean of all parameters."""
        states = [c.mean_state() for c in self.chains]
        out = states[0].copy()
        for name in ("mu", "alpha", "theta", "delta", "tau", "sigma"):
            getattr(out, name)[...] = np.mean(
                [getattr(s, name) for s in states], axis=0)
        out.nu = np.mean([np.asarray(s.nu, dtype=float) for s in states], axis=0)
        if self.spec.model != "PMIX":
            out.nu = float(out.nu)
        if out.sel_a is not None:
            out.sel_a = np.mean([s.sel_a for s in states], axis=0)
            out.sel_beta = np.mean(
                [np.asarray(s.sel_beta, dtype=float) for s in states], axis=0)
            if self.spec.model == "SEL":
                out.sel_beta = float(out.sel_beta)
        return out

    # -- summaries ---------------------------------------------------------

    def theta_names(self):
        return [f"theta[t={t + 1},j={tid}]" for t, tid in self.effect_keys]

    def summary(self):
        rows = []
        scalars = self.all_scalars()          # (m, n, p)
        pooled = scalars.reshape(-1, scalars.shape[-1])
        means = pooled.mean(axis=0)
        sds = pooled.std(axis=0, ddof=1)
        q = np.percentile(pooled, [2.5, 97.5], axis=0)
        for i, name in enumerate(self.scalar_names):
            rows.append((name, means[i], sds[i], q[0, i], q[1, i]))
        th = self.theta_draws().reshape(-1, len(self.effect_keys))
        if th.shape[1]:
            tmeans = th.mean(axis=0)
            tsds = th.std(axis=0, ddof=1)
            tq = np.percentile(th, [2.5, 97.5], axis=0)
            for i, name in enumerate(self.theta_names()):
                rows.append((name, tmeans[i], tsds[i], tq[0, i], tq[1, i]))
        # student effects from pooled moments; intervals via normal approx
        stats = self.delta_chain_stats()
        ns = np.array([s[0] for s in stats], dtype=float)
        cmeans = np.stack([s[1] for s in stats])
        cvars = np.stack([s[2] for s in stats])
        if cmeans.shape[1]:
            w = ns / ns.sum()
            dmean = (w[:, None] * cmeans).sum(axis=0)
            second = (w[:, None] * (cvars + cmeans ** 2)).sum(axis=0)
            dvar = np.maximum(second - dmean ** 2, 0.0)
            dsd = np.sqrt(dvar)
            for i, sid in enumerate(self.student_ids):
                rows.append((f"delta[{sid}]", dmean[i], dsd[i],
                             dmean[i] - 1.96 * dsd[i], dmean[i] + 1.96 * dsd[i]))
        table = pd.DataFrame(rows, columns=["param", "mean", "sd", "q025", "q975"])
        table = table.set_index("param")
        return PosteriorSummary(self.spec.model, table,
                                effect_keys=list(self.effect_keys),
                                student_ids=list(self.student_ids))

    # -- persistence -------------------------------------------------------

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        arrays = {}
        for ci, c in enumerate(self.chains):
            arrays[f"scalars_{ci}"] = c.scalars
            arrays[f"theta_{ci}"] = c.theta
            arrays[f"loglik_score_{ci}"] = c.loglik_score
            if c.loglik_sel is not None:
                arrays[f"loglik_sel_{ci}"] = c.loglik_sel
            arrays[f"delta_sum_{ci}"] = c.delta_sum
            arrays[f"delta_sumsq_{ci}"] = c.delta_sumsq
            if c.delta_draws is not None:
                arrays[f"delta_draws_{ci}"] = c.delta_draws
        np.savez_compressed(os.path.join(directory, "draws.npz"), **arrays)
        manifest = {
            "model": self.spec.model,
            "spec": _spec_to_dict(self.spec),
            "seed": self.seed,
            "n_chains": self.n_chains,
            "n_retained": self.n_retained,
            "scalar_names": self.scalar_names,
            "effect_keys": [[t, tid] for t, tid in self.effect_keys],
            "student_ids": self.student_ids,
        }
        with open(os.path.join(directory, "run_manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "run_manifest.json")) as fh:
            manifest = json.load(fh)
        spec = _spec_from_dict(manifest["spec"])
        data = np.load(os.path.join(directory, "draws.npz"))
        chains = []
        n_ret = manifest["n_retained"]
        for ci in range(manifest["n_chains"]):
            c = ChainDraws.__new__(ChainDraws)
            c.spec = spec
            c.grouping = None
            c.scalar_names = manifest["scalar_names"]
            c.scalars = data[f"scalars_{ci}"]
            c.theta = data[f"theta_{ci}"]
            c.loglik_score = data[f"loglik_score_{ci}"]
            c.loglik_sel = data.get(f"loglik_sel_{ci}") if hasattr(data, "get") else (
                data[f"loglik_sel_{ci}"] if f"loglik_sel_{ci}" in data.files else None)
            c.delta_sum = data[f"delta_sum_{ci}"]
            c.delta_sumsq = data[f"delta_sumsq_{ci}"]
            c.delta_draws = (data[f"delta_draws_{ci}"]
                             if f"delta_draws_{ci}" in data.files else None)
            c.n_recorded = n_ret
            c._state_sums = None
            c.accept_delta = c.accept_sel = c.sel_steps = None
            chains.append(c)
        archive = cls.__new__(cls)
        archive.spec = spec
        archive.panel = archive.design = archive.grouping = None
        archive.chains = chains
        archive.seed = manifest["seed"]
        archive.effect_keys = [(t, tid) for t, tid in manifest["effect_keys"]]
        archive.student_ids = manifest["student_ids"]
        archive.scalar_names = manifest["scalar_names"]
        return archive

    def write_draws_csv(self, path):
        """Columnar draws file: chain, iteration, then one column per scalar
        parameter and classroom effect (student effects excluded unless the
        run stored them)."""
        frames = []
        for ci, c in enumerate(self.chains):
            df = pd.DataFrame(c.scalars, columns=self.scalar_names)
            for i, name in enumerate(self.theta_names()):
                df[name] = c.theta[:, i]
            if c.delta_draws is not None:
                for i, sid in enumerate(self.student_ids):
                    df[f"delta[{sid}]"] = c.delta_draws[:, i]
            df.insert(0, "iteration", np.arange(1, c.n_recorded + 1))
            df.insert(0, "chain", ci + 1)
            frames.append(df)
        pd.concat(frames, ignore_index=True).to_csv(path, index=False,
                                                    float_format="%.8g")


def _spec_to_dict(spec):
    d = dataclasses.asdict(spec)
    for key in ("fix_means", "fix_alpha", "fix_sel_beta"):
        if d[key] is not None:
            d[key] = np.asarray(d[key]).tolist()
    if d["fix_variances"] is not None:
        fv = spec.fix_variances
        d["fix_variances"] = {
            "nu2": fv.nu2, "sigma2": list(fv.sigma2), "tau2": list(fv.tau2),
            "alpha": np.asarray(fv.alpha).tolist(),
        }
    return d


def _spec_from_dict(d):
    from .gls import VarianceProfile
    d = dict(d)
    prior = PriorSpec(**d.pop("priors"))
    fv = d.pop("fix_variances")
    if fv is not None:
        fv = VarianceProfile(nu2=fv["nu2"], sigma2=tuple(fv["sigma2"]),
                             tau2=tuple(fv["tau2"]), alpha=np.asarray(fv["alpha"]))
    for key in ("fix_means", "fix_alpha", "fix_sel_beta"):
        if d[key] is not None:
            d[key] = np.asarray(d[key])
    return ModelSpec(priors=prior, fix_variances=fv, **d)


# ---------------------------------------------------------------------------
# Posterior summary


class PosteriorSummary:
    """Posterior means, SDs and central 95% intervals keyed by parameter."""

    def __init__(self, model, table, effect_keys=None, student_ids=None):
        self.model = model
        self.table = table
        self.effect_keys = effect_keys or []
        self.student_ids = student_ids or []

    def scalar(self, name):
        return float(self.table.loc[name, "mean"])

    def nu_hat(self):
        if self.model == "PMIX":
            raise ValueError("PMIX has per-group student-effect SDs")
        return self.scalar("nu")

    def teacher_effects(self):
        """DataFrame (grade, tchid, mean, sd) of classroom effects."""
        rows = []
        for t, tid in self.effect_keys:
            name = f"theta[t={t + 1},j={tid}]"
            rows.append({
                "grade": t + 1, "tchid": tid,
                "mean": self.table.loc[name, "mean"],
                "sd": self.table.loc[name, "sd"],
            })
        return pd.DataFrame(rows)

    def student_effects(self):
        """DataFrame (stuid, mean, sd) of student effects."""
        rows = []
        for sid in self.student_ids:
            name = f"delta[{sid}]"
            rows.append({
                "stuid": sid,
                "mean": self.table.loc[name, "mean"],
                "sd": self.table.loc[name, "sd"],
            })
        return pd.DataFrame(rows)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        self.table.to_csv(os.path.join(directory, "summary.csv"),
                          float_format="%.10g")
        meta = {
            "model": self.model,
            "effect_keys": [[t, tid] for t, tid in self.effect_keys],
            "student_ids": self.student_ids,
        }
        with open(os.path.join(directory, "summary_meta.json"), "w") as fh:
            json.dump(meta, fh, indent=1)

    @classmethod
    def load(cls, directory):
        table = pd.read_csv(os.path.join(directory, "summary.csv"), index_col="param")
        with open(os.path.join(directory, "summary_meta.json")) as fh:
            meta = json.load(fh)
        return cls(meta["model"], table,
                   effect_keys=[(t, tid) for t, tid in meta["effect_keys"]],
                   student_ids=meta["student_ids"])
