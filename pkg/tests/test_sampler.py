from __future__ import annotations

import warnings
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit, gammaln, logsumexp

from betamix.distributions import InvWishart, inv_wishart_log_pdf, inv_wishart_sample, mvnormal_log_pdf
from betamix.model import GroupedDataset, ModelSpec, ParamState, log_likelihood
from betamix.priors import PRIOR_PRESETS, PriorCatalog, ScaledBetaSquared, UniformSquared
from betamix.sampler import (
    GibbsSampler,
    SamplerConfig,
    SamplerError,
    Trace,
    check_deviance,
    initial_state,
    metropolis_accept,
    nu_log_conditional,
    run_chain,
    run_ensemble,
    sample_lambda_conditional,
    sample_sigma_conditional,
)
from betamix.diagnostics import mc_error
from betamix.simulate import SIM_SPEC_NORMAL, SIM_SPEC_T, GenConfig, generate_dataset

CAT = PRIOR_PRESETS["paper-sim"]


def _cfg(**kw):
    base = dict(n_iterations=1200, burn_in=200, n_chains=1, seed=1)
    base.update(kw)
    return SamplerConfig(**base)


@pytest.fixture(scope="module")
def tiny():
    return generate_dataset(GenConfig(m=5, n_per_group=2, seed=1))


# -- configuration and plumbing -------------------------------------------------


def test_config_defaults_and_validation():
    cfg = SamplerConfig()
    assert cfg.burn_in == 2000 and cfg.n_retained == 18000
    with pytest.raises(ValueError):
        SamplerConfig(n_iterations=10, burn_in=10)
    with pytest.raises(ValueError):
        SamplerConfig(fixed=("gamma",))
    with pytest.raises(ValueError):
        SamplerConfig(proposal_covariance="magic")
    with pytest.warns(UserWarning):
        SamplerConfig(n_iterations=150, burn_in=100)


def test_single_draw_config(tiny):
    data, _ = tiny
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = SamplerConfig(n_iterations=13, burn_in=10, thin=3, n_chains=1)
    trace = run_chain(SIM_SPEC_T, CAT, data, cfg)
    assert len(trace) == 1


def test_same_seed_bit_identical(tiny):
    data, _ = tiny
    a = run_chain(SIM_SPEC_T, CAT, data, _cfg())
    b = run_chain(SIM_SPEC_T, CAT, data, _cfg())
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.deviance, b.deviance)


def test_chains_differ_and_are_isolated(tiny):
    data, _ = tiny
    cfg = _cfg(n_chains=2)
    traces = run_ensemble(SIM_SPEC_T, CAT, data, cfg)
    assert not np.array_equal(traces[0].values[0], traces[1].values[0])
    alone = run_chain(SIM_SPEC_T, CAT, data, cfg, chain_index=1)
    np.testing.assert_array_equal(alone.values, traces[1].values)


def test_parallel_chains_match_serial(tiny):
    data, _ = tiny
    serial = run_ensemble(SIM_SPEC_T, CAT, data, _cfg(n_chains=2))
    parallel = run_ensemble(SIM_SPEC_T, CAT, data, _cfg(n_chains=2, n_jobs=2))
    for s, p in zip(serial, parallel):
        np.testing.assert_array_equal(s.values, p.values)


def test_deviance_matches_state(small_sim):
    data, _ = small_sim
    trace = run_chain(SIM_SPEC_T, CAT, data, _cfg())
    for k in (0, len(trace) // 2, len(trace) - 1):
        assert check_deviance(trace, SIM_SPEC_T, data, k) < 1e-8


def test_retained_draws_have_finite_posterior(tiny):
    from betamix.priors import log_prior

    data, _ = tiny
    trace = run_chain(SIM_SPEC_T, CAT, data, _cfg())
    for state in list(trace.states())[::50]:
        assert np.linalg.eigvalsh(state.Sigma_b).min() > 0
        assert np.isfinite(log_prior(CAT, SIM_SPEC_T, state) + log_likelihood(SIM_SPEC_T, state, data))


def test_trace_csv_round_trip(tmp_path, tiny):
    data, _ = tiny
    trace = run_chain(SIM_SPEC_T, CAT, data, _cfg())
    path = tmp_path / "chain.csv"
    trace.to_csv(path)
    back = Trace.from_csv(path)
    np.testing.assert_array_equal(back.values, trace.values)
    np.testing.assert_array_equal(back.deviance, trace.deviance)
    assert back.names[:3] == ["beta.1", "beta.2", "beta.3"]
    assert "Sigma_b.1.2" in back.names and "Sigma_b.2.1" not in back.names
    assert path.read_text().splitlines()[0].endswith(",deviance")


def test_bad_start_is_reported(tiny):
    data, truth = tiny
    init = initial_state(SIM_SPEC_T, CAT, data)
    init.phi = 5000.0  # outside the (0, 2500) support of the scaled beta prior
    with pytest.raises(SamplerError, match="phi"):
        GibbsSampler(SIM_SPEC_T, CAT, data, _cfg(), init=init)


def test_model2_variants_run(small_sim):
    data, _ = small_sim
    W = np.column_stack([np.ones(data.n_obs), data.X[:, 2]])
    H = np.ones((data.n_obs, 1))
    d2 = GroupedDataset(y=data.y, X=data.X, Z=data.Z, W=W, H=H, group=data.group, unit_ids=data.unit_ids)
    for tie in (True, False):
        spec = ModelSpec(p=3, q=2, precision="regression", p_star=2, q_star=1, tie_random_effects=tie)
        trace = run_chain(spec, CAT, d2, _cfg(n_iterations=600, burn_in=100))
        assert trace.has("delta") and trace.has("d")
        assert trace.has("Sigma_d") != tie
        assert check_deviance(trace, spec, d2, len(trace) - 1) < 1e-8


def test_empirical_proposals_still_run(tiny):
    data, _ = tiny
    trace = run_chain(SIM_SPEC_T, CAT, data, _cfg(proposal_covariance="empirical", adapt_window=50))
    assert 0.0 < trace.acceptance["beta"] < 1.0


# -- single blocks ----------------------------------------------------------------


def test_metropolis_accept_limits(rng):
    assert np.all(metropolis_accept(np.zeros(1000), rng))
    assert not np.any(metropolis_accept(np.full(1000, -np.inf), rng))
    assert not np.any(metropolis_accept(np.full(10, np.nan), rng))


@pytest.mark.parametrize("block", ["beta", "b", "phi"])
def test_zero_step_always_accepted(tiny, block):
    data, _ = tiny
    cfg = _cfg(n_iterations=200, burn_in=0, initial_step_sizes={block: 0.0})
    trace = run_chain(SIM_SPEC_T, CAT, data, cfg)
    assert trace.acceptance[block] == 1.0


def test_single_group_update_zero_step(tiny):
    data, _ = tiny
    s = GibbsSampler(SIM_SPEC_T, CAT, data, _cfg(initial_step_sizes={"b": 0.0}))
    before = s.state.b.copy()
    assert all(s.update_random_effect(i) for i in range(data.m))
    np.testing.assert_array_equal(s.state.b, before)


def test_sigma_conditional_empty_data_is_prior(rng):
    psi, c = np.array([[2.0, 0.3], [0.3, 1.0]]), 6.0
    draws = np.array([sample_sigma_conditional(np.zeros((0, 2)), np.zeros(0), psi, c, rng) for _ in range(40_000)])
    mean = draws.mean(axis=0)
    np.testing.assert_allclose(mean, psi / (c - 3), rtol=0.05, atol=0.02)


def test_sigma_conditional_one_dimensional_mean(rng):
    draws = [sample_sigma_conditional(np.ones((3, 1)), np.ones(3), np.array([[2.0]]), 3.0, rng)[0, 0] for _ in range(40_000)]
    assert np.mean(draws) == pytest.approx(1.25, rel=0.03)


def test_sigma_conditional_is_proportional_to_prior_times_likelihood(rng):
    psi, c = np.diag([20.0, 20.0]), 5.0
    b = rng.normal(size=(7, 2))
    lam = rng.gamma(2.0, 0.5, size=7)
    post = InvWishart(psi + (b * lam[:, None]).T @ b, c + 7)
    prior = InvWishart(psi, c)
    gaps = []
    for _ in range(5):
        a = rng.normal(size=(2, 2))
        S = a @ a.T + 0.5 * np.eye(2)
        lik = sum(mvnormal_log_pdf(b[i], np.zeros(2), S / lam[i]) for i in range(7))
        gaps.append(inv_wishart_log_pdf(S, post) - inv_wishart_log_pdf(S, prior) - lik)
    assert np.ptp(gaps) < 1e-8


def test_lambda_with_zero_effect(rng):
    nu, q = 6.0, 2
    lam = np.array([sample_lambda_conditional(np.zeros((1, q)), np.eye(q), nu, rng)[0] for _ in range(50_000)])
    assert lam.mean() == pytest.approx((nu + q) / nu, rel=0.02)
    assert stats.kstest(lam, stats.gamma((nu + q) / 2, scale=2 / nu).cdf).pvalue > 0.01


def test_lambda_concentrates_for_large_nu(rng):
    lam = sample_lambda_conditional(rng.normal(size=(10_000, 1)), np.eye(1), 1e4, rng)
    assert lam.var() < 0.01


def test_scale_mixture_identity(rng):
    # N(0, 1 / lambda) with lambda ~ Gamma(nu / 2, nu / 2) is Student t with nu dof
    lam = rng.gamma(5.0, 1 / 5.0, size=20_000)
    mixed = rng.standard_normal(20_000) / np.sqrt(lam)
    direct = stats.t(10).rvs(size=20_000, random_state=rng)
    assert stats.ks_2samp(mixed, direct).pvalue > 0.01


def test_nu_conditional_matches_gamma_product():
    lam = np.array([0.5, 1.2, 2.0])
    nus = [3.0, 10.0, 40.0]
    vals = [nu_log_conditional(n, lam, CAT) for n in nus]
    ref = [np.log(0.1) - 0.1 * n + stats.gamma(n / 2, scale=2 / n).logpdf(lam).sum() for n in nus]
    np.testing.assert_allclose(np.diff(vals), np.diff(ref), rtol=1e-10)


def test_nu_posterior_large_when_all_lambda_one():
    data, _ = generate_dataset(GenConfig(m=200, n_per_group=1, seed=5))
    spec = SIM_SPEC_T
    cfg = SamplerConfig(
        n_iterations=6000, burn_in=1000, n_chains=1, seed=3, fixed=("beta", "b", "Sigma_b", "lambda_b", "phi")
    )
    trace = run_chain(spec, CAT, data, cfg)
    assert np.median(trace.column("nu_b")) >= 30


# -- prior recovery (likelihood switched off) ----------------------------------


@pytest.fixture(scope="module")
def prior_run(tiny):
    data, _ = tiny
    cat = PriorCatalog(phi_prior=UniformSquared(50.0))
    cfg = SamplerConfig(n_iterations=105_000, burn_in=5_000, thin=1, n_chains=1, seed=17, use_likelihood=False)
    return run_chain(SIM_SPEC_T, cat, data, cfg)


def test_prior_recovery_beta(prior_run):
    thin = prior_run.values[::10]
    for k in range(3):
        draws = thin[:, k]
        assert stats.kstest(draws, stats.t(10, scale=np.sqrt(10)).cdf).pvalue > 0.01


def test_prior_recovery_nu(prior_run):
    nu = prior_run.column("nu_b")
    assert nu.mean() == pytest.approx(10.0, rel=0.05)


def test_prior_recovery_phi_uniform_squared(prior_run):
    phi = prior_run.column("phi")[::10]
    assert stats.kstest(phi, lambda x: np.sqrt(np.clip(x, 0, 2500)) / 50).pvalue > 0.01


def test_prior_recovery_sigma(prior_run):
    s11 = prior_run.column("Sigma_b.1.1")[::10]
    law = InvWishart(np.diag([20.0, 20.0]), 5.0)
    rng = np.random.default_rng(0)
    direct = np.array([inv_wishart_sample(law, rng)[0, 0] for _ in range(20_000)])
    assert stats.ks_2samp(s11, direct).pvalue > 0.01


def test_prior_recovery_deviance_is_missing(prior_run):
    assert np.all(np.isnan(prior_run.deviance))


def test_effects_without_design_follow_conditional_prior():
    # Z columns all zero: the data say nothing about b_i, so b_i ~ t_nu(0, Sigma)
    data, _ = generate_dataset(GenConfig(m=5, n_per_group=2, seed=2))
    blind = GroupedDataset(y=data.y, X=data.X, Z=np.zeros_like(data.Z), group=data.group, unit_ids=data.unit_ids)
    init = initial_state(SIM_SPEC_T, CAT, blind)
    init.Sigma_b = np.array([[1.0, 0.3], [0.3, 0.5]])
    init.nu_b = 10.0
    cfg = SamplerConfig(n_iterations=60_000, burn_in=2_000, n_chains=1, seed=4, fixed=("Sigma_b", "nu_b"))
    trace = run_chain(SIM_SPEC_T, CAT, blind, cfg, init=init)
    b11 = trace.column("b.1.1")[::10]
    b12 = trace.column("b.1.2")[::10]
    assert stats.kstest(b11, stats.t(10, scale=1.0).cdf).pvalue > 0.01
    assert stats.kstest(b12, stats.t(10, scale=np.sqrt(0.5)).cdf).pvalue > 0.01


# -- micro model against 2-d quadrature ------------------------------------------


MICRO_Y = np.array([0.25, 0.3])
MICRO_PHI = 30.0
MICRO_SIGMA = 0.25
MICRO_CAT = PriorCatalog(beta_mean=-2.0, beta_scale=0.25, phi_prior=ScaledBetaSquared(50.0, 0.5))


def _micro_data():
    return GroupedDataset(y=MICRO_Y, X=np.ones((2, 1)), Z=np.ones((2, 1)), group=np.zeros(2, int), unit_ids=["g"])


def micro_oracle(points: int = 400):
    """Posterior means of (beta_1, b_1) by brute-force quadrature on a grid."""
    beta = np.linspace(-2.0 - 4.0, -2.0 + 4.0, points)
    b = np.linspace(-3.0, 3.0, points)
    B, E = np.meshgrid(beta, b, indexing="ij")
    mu = expit(B + E)
    a, c = mu * MICRO_PHI, (1 - mu) * MICRO_PHI
    loglik = sum(
        gammaln(MICRO_PHI) - gammaln(a) - gammaln(c) + (a - 1) * np.log(y) + (c - 1) * np.log1p(-y) for y in MICRO_Y
    )
    logp = loglik + stats.t(10, loc=-2.0, scale=0.5).logpdf(B) + stats.norm(0, np.sqrt(MICRO_SIGMA)).logpdf(E)
    w = np.exp(logp - logsumexp(logp))
    return float(np.sum(w * B)), float(np.sum(w * E))


def run_micro(seed: int = 0, n_iterations: int = 60_000):
    spec = ModelSpec(p=1, q=1, re_law_b="normal")
    data = _micro_data()
    init = initial_state(spec, MICRO_CAT, data)
    init.phi = MICRO_PHI
    init.Sigma_b = np.array([[MICRO_SIGMA]])
    cfg = SamplerConfig(n_iterations=n_iterations, burn_in=5_000, n_chains=2, seed=seed, fixed=("phi", "Sigma_b"))
    return run_ensemble(spec, MICRO_CAT, data, cfg, init=init)


def test_micro_oracle_grid_is_converged():
    coarse, fine = micro_oracle(200), micro_oracle(600)
    np.testing.assert_allclose(coarse, fine, rtol=1e-4)


def test_micro_model_matches_quadrature():
    beta_o, b_o = micro_oracle()
    merged = Trace.merge(run_micro())
    assert merged.column("beta.1").mean() == pytest.approx(beta_o, rel=0.02)
    assert merged.column("b.1.1").mean() == pytest.approx(b_o, rel=0.02)


# -- behaviour on the simulation design ------------------------------------------


@pytest.fixture(scope="module")
def desk_trace():
    data, _ = generate_dataset(GenConfig(m=50, n_per_group=5, seed=0))
    cfg = SamplerConfig(n_iterations=6000, burn_in=1500, n_chains=1, seed=0)
    return data, run_chain(SIM_SPEC_T, CAT, data, cfg)


def test_vector_block_acceptance_in_band(desk_trace):
    _, trace = desk_trace
    for block in ("beta", "b"):
        assert 0.15 <= trace.acceptance[block] <= 0.40, (block, trace.acceptance[block])
    for block in ("phi", "nu_b"):
        assert 0.25 <= trace.acceptance[block] <= 0.65


def test_group_order_does_not_matter(desk_trace):
    data, trace = desk_trace
    order = np.random.default_rng(1).permutation(data.m)
    shuffled = run_chain(SIM_SPEC_T, CAT, data.subset(order), SamplerConfig(n_iterations=6000, burn_in=1500, n_chains=1, seed=9))
    for name in ("beta.1", "beta.2", "beta.3", "phi"):
        a, b = trace.column(name), shuffled.column(name)
        se = np.hypot(mc_error(a), mc_error(b))
        assert abs(a.mean() - b.mean()) < 4 * se + 1e-3 * abs(a.mean()), name


def test_normal_spec_records_no_nu(small_sim):
    data, _ = small_sim
    trace = run_chain(SIM_SPEC_NORMAL, CAT, data, _cfg(n_iterations=400, burn_in=100))
    assert not trace.has("nu_b")
