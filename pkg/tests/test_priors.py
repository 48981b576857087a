from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from betamix.priors import (
    PRIOR_PRESETS,
    InverseGamma,
    LogT,
    PriorCatalog,
    ScaledBetaSquared,
    UniformSquared,
    log_prior,
    log_prior_blocks,
    phi_log_prior,
    phi_prior_sample,
)
from betamix.simulate import SIM_SPEC_T, GenConfig, generate_dataset
from betamix.model import log_likelihood


def test_scaled_beta_with_zero_eps_is_uniform_squared():
    for phi in np.linspace(1.0, 2499.0, 40):
        assert phi_log_prior(ScaledBetaSquared(50, 0.0), phi) == pytest.approx(
            phi_log_prior(UniformSquared(50), phi), abs=1e-12
        )
    assert phi_log_prior(UniformSquared(50), 625.0) == pytest.approx(np.log(4e-4), abs=1e-12)
    assert phi_log_prior(UniformSquared(50), 2501.0) == -np.inf


def test_inverse_gamma_against_reciprocal_gamma():
    # density of 1/X with X ~ Gamma(0.01, rate 0.01), by change of variables
    x = 1.0 / 49.0
    ref = stats.gamma(0.01, scale=100.0).logpdf(x) + 2.0 * np.log(x)
    assert phi_log_prior(InverseGamma(0.01), 49.0) == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize(
    "variant",
    [ScaledBetaSquared(50, 0.5), ScaledBetaSquared(50, 0.1), UniformSquared(50), LogT(10, 0, 10), InverseGamma(0.5)],
)
def test_phi_density_matches_its_sampler(variant):
    rng = np.random.default_rng(8)
    draws = phi_prior_sample(variant, rng, size=20_000)
    grid = np.sort(draws)[::400]
    logpdf = np.array([phi_log_prior(variant, g) for g in grid])
    # log density by change of variables vs a histogram of log(phi)
    z = np.log(draws)
    hist, edges = np.histogram(z, bins=40, range=np.quantile(z, [0.02, 0.98]), density=True)
    mids = 0.5 * (edges[1:] + edges[:-1])
    dens = np.array([np.exp(phi_log_prior(variant, np.exp(m)) + m) for m in mids])
    assert np.all(np.isfinite(logpdf))
    assert np.max(np.abs(hist - dens)) < 0.15 * dens.max()


def test_scaled_beta_sample_transform_ks():
    rng = np.random.default_rng(9)
    draws = phi_prior_sample(ScaledBetaSquared(50, 0.5), rng, size=100_000)
    oracle = (50 * np.random.default_rng(10).beta(1.5, 1.5, size=100_000)) ** 2
    assert stats.ks_2samp(draws, oracle).statistic < 0.01


def test_uniform_squared_support_and_log_t_median():
    rng = np.random.default_rng(12)
    u = phi_prior_sample(UniformSquared(50), rng, size=10_000)
    assert np.all((u > 0) & (u < 2500))
    lt = phi_prior_sample(LogT(10, 0, 5), rng, size=20_000)
    assert abs(np.median(np.log(lt))) < 0.1


@pytest.mark.parametrize("bad", [lambda: ScaledBetaSquared(-1, 0), lambda: ScaledBetaSquared(50, -0.1), lambda: InverseGamma(0), lambda: UniformSquared(0), lambda: LogT(10, 0, 0)])
def test_prior_validation(bad):
    with pytest.raises(ValueError):
        bad()


def test_catalog_validation():
    with pytest.raises(ValueError):
        PriorCatalog(beta_scale=-1.0)
    with pytest.raises(ValueError):
        PriorCatalog(nu_rate=0.0)
    with pytest.raises(ValueError):
        PriorCatalog(beta_family="laplace")


def _truth():
    return generate_dataset(GenConfig(m=10, seed=3))


def test_log_prior_finite_at_truth():
    data, truth = _truth()
    cat = PRIOR_PRESETS["paper-sim"]
    total = log_prior(cat, SIM_SPEC_T, truth) + log_likelihood(SIM_SPEC_T, truth, data)
    assert np.isfinite(total)


def test_sigma_scaling_only_moves_sigma_terms():
    _, truth = _truth()
    cat = PRIOR_PRESETS["paper-sim"]
    other = truth.copy()
    other.Sigma_b = 2.0 * truth.Sigma_b
    a = log_prior_blocks(cat, SIM_SPEC_T, truth)
    b = log_prior_blocks(cat, SIM_SPEC_T, other)
    for k in a:
        if k in ("Sigma_b", "b"):
            assert a[k] != b[k]
        else:
            assert a[k] == b[k]


def test_log_prior_locally_maximal_at_modes():
    _, truth = _truth()
    cat = PRIOR_PRESETS["paper-sim"]
    state = truth.copy()
    state.beta = np.zeros(3)
    state.b = np.zeros_like(truth.b)
    base = log_prior_blocks(cat, SIM_SPEC_T, state)["beta"]
    for k in range(3):
        for h in (-1e-3, 1e-3):
            moved = state.copy()
            moved.beta[k] += h
            assert log_prior_blocks(cat, SIM_SPEC_T, moved)["beta"] < base


def test_augmented_and_marginal_agree_after_integrating_lambda():
    # integrating the gamma mixing density out of the augmented form gives the t density
    from scipy import integrate

    _, truth = _truth()
    cat = PRIOR_PRESETS["paper-sim"]
    one = truth.copy()
    one.b = truth.b[:1]
    nu, Sigma = truth.nu_b, truth.Sigma_b
    marg = log_prior_blocks(cat, SIM_SPEC_T, one)["b"]

    def integrand(lam):
        s = one.copy()
        s.lambda_b = np.array([lam])
        return np.exp(log_prior_blocks(cat, SIM_SPEC_T, s, augmented=True)["b"])

    val, _ = integrate.quad(integrand, 0, np.inf, limit=200)
    assert np.log(val) == pytest.approx(marg, abs=1e-8)
