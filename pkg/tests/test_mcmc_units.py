import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from seqvam import (ModelError, ModelSpec, PriorSpec, build_design,
                    conditional_loglik, group_patterns, run_chain, run_chains,
                    sample_bounded_sd, selection_loglik)
from seqvam.archive import scalar_layout, scalar_vector
from seqvam.panel import ScorePanel
from seqvam.sampler import score_loglik


# -- selection likelihoods ---------------------------------------------------


def test_hazard_oracle_table1():
    # a = (-1.00, 0.90, 0.71, 0.79), beta = -0.83, delta = 0.72:
    # Pr(n = 5) is the product of the four continuation probabilities ~ 0.0754
    a = np.array([-1.00, 0.90, 0.71, 0.79])
    beta, delta = -0.83, 0.72
    ll = selection_loglik(np.array([5]), np.array([delta]), (a, beta))
    assert np.exp(ll[0]) == pytest.approx(0.0754, abs=5e-4)
    h = expit(a + beta * delta)
    assert np.exp(ll[0]) == pytest.approx(np.prod(1 - h), rel=1e-12)


def test_hazard_probabilities_sum_to_one():
    a = np.array([-1.0, 0.9, 0.71, 0.79])
    for delta in (-1.5, 0.0, 2.0):
        probs = [np.exp(selection_loglik(np.array([n]), np.array([delta]), (a, -0.83)))[0]
                 for n in range(1, 6)]
        assert sum(probs) == pytest.approx(1.0, abs=1e-12)


def test_hazard_stop_at_one():
    a = np.array([0.5, 0.0, 0.0, 0.0])
    ll = selection_loglik(np.array([1]), np.array([0.0]), (a, 0.0))
    assert np.exp(ll[0]) == pytest.approx(expit(0.5), rel=1e-12)


def test_literal_parameterization_cumulative():
    # monotone intercepts: cell probability is the difference of cumulative
    # logistic terms; Pr(n=5) is one minus the last cumulative value
    a = np.array([-2.0, -1.0, 0.0, 1.0])
    delta = 0.3
    beta = 0.5
    cum = expit(a + beta * delta)
    ll2 = selection_loglik(np.array([2]), np.array([delta]), (a, beta), "literal")
    assert np.exp(ll2[0]) == pytest.approx(cum[1] - cum[0], rel=1e-10)
    ll5 = selection_loglik(np.array([5]), np.array([delta]), (a, beta), "literal")
    assert np.exp(ll5[0]) == pytest.approx(1 - cum[3], rel=1e-10)


def test_literal_nonmonotone_gives_neg_inf():
    a = np.array([1.0, -1.0, 0.0, 0.5])       # Pr(n <= 2) < Pr(n <= 1)
    ll = selection_loglik(np.array([2]), np.array([0.0]), (a, 0.0), "literal")
    assert np.isneginf(ll[0])


def test_sel2_bernoulli_product():
    a = np.array([0.2, -0.1, 0.4, 0.0, 1.0])
    beta = np.array([0.5, 0.5, -0.5, 0.0, 1.0])
    delta = np.array([0.7, -1.2])
    r = np.array([[1, 0, 1, 1, 0], [1, 1, 1, 1, 1]], dtype=float)
    ll = selection_loglik(r, delta, (a, beta))
    for i in range(2):
        p = expit(a + beta * delta[i])
        expect = np.sum(r[i] * np.log(p) + (1 - r[i]) * np.log(1 - p))
        assert ll[i] == pytest.approx(expect, rel=1e-10)


def test_selection_loglik_rejects_bad_counts():
    with pytest.raises(ModelError):
        selection_loglik(np.array([0]), np.array([0.0]), (np.zeros(4), 0.0))
    with pytest.raises(ModelError):
        selection_loglik(np.array([6]), np.array([0.0]), (np.zeros(4), 0.0))


# -- bounded SD sampler ------------------------------------------------------


def test_sample_bounded_sd_uniform_when_empty(rng):
    draws = np.array([sample_bounded_sd(rng, 0, 0.0, 0.7, 0.3) for _ in range(4000)])
    assert np.all((draws > 0) & (draws < 0.7))
    assert stats.kstest(draws, "uniform", args=(0, 0.7)).statistic < 0.035


def test_sample_bounded_sd_matches_density(rng):
    # m = 12, ssq = 1.5, upper = 0.7: compare against the normalized target
    # density on a grid via the probability integral transform
    m, ssq, upper = 12, 1.5, 0.7
    grid = np.linspace(1e-4, upper, 20001)
    pdf = grid ** (-m) * np.exp(-ssq / (2 * grid ** 2))
    cdf = np.cumsum(pdf)
    cdf /= cdf[-1]
    draws = np.array([sample_bounded_sd(rng, m, ssq, upper, 0.3) for _ in range(4000)])
    u = np.interp(draws, grid, cdf)
    assert stats.kstest(u, "uniform").statistic < 0.035


def test_sample_bounded_sd_respects_bound(rng):
    # tiny ssq pushes mass toward 0 but the bound still holds
    draws = [sample_bounded_sd(rng, 40, 1e-6, 0.1, 0.05) for _ in range(200)]
    assert all(0 < d < 0.1 for d in draws)


# -- model spec --------------------------------------------------------------


def test_model_spec_validation():
    with pytest.raises(ModelError):
        ModelSpec(model="BOGUS")
    with pytest.raises(ModelError):
        ModelSpec(selection_parameterization="cumulativeish")
    with pytest.raises(ModelError):
        ModelSpec(keep=10, thin=3)
    with pytest.raises(ModelError):
        ModelSpec(chains=0)
    with pytest.raises(ModelError):
        PriorSpec(tau_upper=0.0)
    spec = ModelSpec(model="SEL")
    assert spec.has_selection and spec.n_retained == 5000
    assert not ModelSpec(model="PMIX").has_selection


# -- scalar layout -----------------------------------------------------------


def test_scalar_layout_names_mar():
    spec = ModelSpec(model="MAR")
    names = scalar_layout(spec)
    assert names[:5] == ["mu[1]", "mu[2]", "mu[3]", "mu[4]", "mu[5]"]
    assert "alpha[2,1]" in names and "alpha[5,4]" in names
    assert names.count("nu") == 1
    assert len(names) == 5 + 10 + 5 + 1 + 5


def test_scalar_layout_names_selection():
    sel = scalar_layout(ModelSpec(model="SEL"))
    assert sel[-5:] == ["a[1]", "a[2]", "a[3]", "a[4]", "beta"]
    sel2 = scalar_layout(ModelSpec(model="SEL2"))
    assert sel2[-10:] == [f"a[{t}]" for t in range(1, 6)] + \
        [f"beta[{t}]" for t in range(1, 6)]


def test_scalar_vector_matches_layout(sim_panel_missing):
    panel, _ = sim_panel_missing
    design = build_design(panel)
    spec = ModelSpec(model="SEL2", chains=1, burn_in=5, keep=5)
    draws = run_chain(spec, panel, design, seed=0)
    names = scalar_layout(spec)
    assert draws.scalars.shape == (5, len(names))
    # the recorded vector round-trips the state orderings
    vec = scalar_vector(draws.mean_state(), spec)
    assert len(vec) == len(names)


def test_scalar_layout_pmix_groups(sim_panel_missing):
    panel, _ = sim_panel_missing
    grouping = group_patterns(panel, 20)
    spec = ModelSpec(model="PMIX")
    names = scalar_layout(spec, grouping)
    for g in grouping.groups:
        gid = g.group_id + 1
        for t in range(5):
            present = f"mu[g={gid},t={t + 1}]" in names
            assert present == g.year_flags[t]
        assert (f"nu[g={gid}]" in names) == (not g.single_score)


# -- running chains ----------------------------------------------------------


def test_run_chain_deterministic(sim_panel_missing):
    panel, _ = sim_panel_missing
    design = build_design(panel)
    spec = ModelSpec(model="SEL", chains=1, burn_in=20, keep=20)
    a = run_chain(spec, panel, design, seed=42)
    b = run_chain(spec, panel, design, seed=42)
    np.testing.assert_array_equal(a.scalars, b.scalars)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_run_chains_spawn_stability(sim_panel_missing):
    # adding a chain never perturbs earlier chains' draws
    panel, _ = sim_panel_missing
    design = build_design(panel)
    two = run_chains(ModelSpec(model="MAR", chains=2, burn_in=10, keep=10),
                     panel, design, seed=9)
    three = run_chains(ModelSpec(model="MAR", chains=3, burn_in=10, keep=10),
                       panel, design, seed=9)
    np.testing.assert_array_equal(two.chains[0].scalars, three.chains[0].scalars)
    np.testing.assert_array_equal(two.chains[1].scalars, three.chains[1].scalars)


def test_fixed_variance_blocks_held(sim_panel_missing):
    panel, truth = sim_panel_missing
    design = build_design(panel)
    profile = truth.variance_profile()
    spec = ModelSpec(model="MAR", chains=1, burn_in=10, keep=10,
                     fix_variances=profile, fix_means=truth.config.mu,
                     fix_alpha=np.eye(5))
    draws = run_chain(spec, panel, design, seed=1)
    names = draws.scalar_names
    tau_cols = [i for i, n in enumerate(names) if n.startswith("tau")]
    for i in tau_cols:
        assert np.ptp(draws.scalars[:, i]) == 0.0
    mu_cols = [i for i, n in enumerate(names) if n.startswith("mu")]
    np.testing.assert_allclose(draws.scalars[0, mu_cols], truth.config.mu)
    alpha_cols = [i for i, n in enumerate(names) if n.startswith("alpha")]
    assert np.all(draws.scalars[:, alpha_cols] == 0.0)


def test_thinning(sim_panel_missing):
    panel, _ = sim_panel_missing
    design = build_design(panel)
    spec = ModelSpec(model="MAR", chains=1, burn_in=5, keep=20, thin=4)
    draws = run_chain(spec, panel, design, seed=2)
    assert draws.n_recorded == 5


def test_pmix_single_score_groups_have_zero_delta(sim_panel_missing):
    panel, _ = sim_panel_missing
    grouping = group_patterns(panel, 0)     # all 31 patterns standalone
    design = build_design(panel)
    spec = ModelSpec(model="PMIX", chains=1, burn_in=20, keep=20)
    draws = run_chain(spec, panel, design, grouping, seed=3)
    single_ids = {g.group_id for g in grouping.groups if g.single_score}
    from seqvam.panel import pattern_of
    state = draws.mean_state()
    for si, rec in enumerate(panel.students):
        if grouping.group_of(pattern_of(rec)) in single_ids:
            assert state.delta[si] == 0.0


def test_pmix_requires_grouping(sim_panel_missing):
    panel, _ = sim_panel_missing
    design = build_design(panel)
    with pytest.raises(ModelError):
        run_chain(ModelSpec(model="PMIX", chains=1, burn_in=1, keep=1),
                  panel, design, seed=0)


# -- likelihood evaluators ---------------------------------------------------


def _naive_loglik(state, panel, design):
    total = 0.0
    for si, rec in enumerate(panel.students):
        for t in range(5):
            if rec.scores[t] is None:
                continue
            m = state.mu[t] + state.delta[si]
            for ts in range(t + 1):
                tid = rec.teacher_links[ts]
                if tid is None:
                    continue
                g = design.effect_keys.index((ts, tid))
                m += state.alpha[t, ts] * state.theta[g]
            total += stats.norm.logpdf(rec.scores[t], m, state.sigma[t])
    return total


def test_conditional_loglik_matches_naive(sim_panel_missing):
    panel, _ = sim_panel_missing
    design = build_design(panel)
    spec = ModelSpec(model="MAR", chains=1, burn_in=10, keep=10)
    state = run_chain(spec, panel, design, seed=4).mean_state()
    assert conditional_loglik(state, design) == pytest.approx(
        _naive_loglik(state, panel, design), abs=1e-10)


def test_conditional_loglik_adds_selection_term(sim_panel_missing):
    panel, _ = sim_panel_missing
    design = build_design(panel)
    spec = ModelSpec(model="SEL", chains=1, burn_in=10, keep=10)
    state = run_chain(spec, panel, design, seed=5).mean_state()
    n_i = np.array([r.n_observed for r in panel.students])
    sel = selection_loglik(n_i, state.delta, (state.sel_a, state.sel_beta)).sum()
    assert conditional_loglik(state, design) == pytest.approx(
        score_loglik(state, design) + sel, abs=1e-10)


def test_loglik_trace_matches_recorded_state(sim_panel_missing):
    # the stored per-draw score log-likelihood agrees with re-evaluating
    # the recorded scalars would require full states; check the mean-state
    # evaluation is finite and below zero on real data
    panel, _ = sim_panel_missing
    design = build_design(panel)
    draws = run_chain(ModelSpec(model="MAR", chains=1, burn_in=50, keep=50),
                      panel, design, seed=6)
    assert np.all(np.isfinite(draws.loglik_score))
    assert score_loglik(draws.mean_state(), design) > draws.loglik_score.mean()


# -- empty panel -------------------------------------------------------------


def test_empty_panel_prior_recovery():
    empty = ScorePanel(students=(), teachers_by_year=((),) * 5)
    design = build_design(empty)
    spec = ModelSpec(model="SEL", chains=1, burn_in=5, keep=2000)
    archive = run_chains(spec, empty, design, seed=77)
    tau = archive.scalar_draws("tau[1]")[0]
    sigma = archive.scalar_draws("sigma[3]")[0]
    nu = archive.scalar_draws("nu")[0]
    beta = archive.scalar_draws("beta")[0]
    assert stats.kstest(tau, "uniform", args=(0, 0.7)).statistic < 0.05
    assert stats.kstest(sigma, "uniform", args=(0, 1.0)).statistic < 0.05
    assert stats.kstest(nu, "uniform", args=(0, 2.0)).statistic < 0.05
    assert stats.kstest(beta, "norm", args=(0, 10.0)).statistic < 0.05


# -- recentering shift --------------------------------------------------------


def test_recenter_keeps_caches_consistent(sim_panel_missing):
    # the shift move updates contrib/mu_obs/tmat in place; after each sweep
    # the caches must agree with a fresh recomputation from the state
    from seqvam.sampler import _Sampler

    panel, _ = sim_panel_missing
    design = build_design(panel)
    rng = np.random.default_rng(3)
    sampler = _Sampler(ModelSpec(model="MAR"), panel, design, None, rng)
    for _ in range(5):
        sampler.sweep()
        s = sampler.state
        theta_pad = np.append(s.theta, 0.0)
        wmat = s.alpha[design.year] * (design.teacher >= 0)
        contrib = (theta_pad[design.teacher] * wmat).sum(axis=1)
        np.testing.assert_allclose(sampler.contrib, contrib, atol=1e-12)
        np.testing.assert_allclose(sampler.mu_obs, s.mu[design.year], atol=1e-12)


def test_recenter_skipped_when_means_fixed(sim_panel_missing):
    from seqvam.sampler import _Sampler

    panel, _ = sim_panel_missing
    design = build_design(panel)
    means = np.array([3.4, 4.0, 4.7, 5.3, 6.0])
    spec = ModelSpec(model="MAR", fix_means=means)
    sampler = _Sampler(spec, panel, design, None, np.random.default_rng(4))
    for _ in range(3):
        sampler.sweep()
    np.testing.assert_array_equal(sampler.state.mu, means)
