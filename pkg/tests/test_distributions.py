from __future__ import annotations

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from betamix.distributions import (
    BetaMP,
    InvWishart,
    MvT,
    beta_mp_log_pdf,
    beta_mp_moments,
    beta_mp_sample,
    gamma_log_pdf,
    gamma_sample,
    inv_gamma_log_pdf,
    inv_wishart_log_pdf,
    inv_wishart_sample,
    is_positive_definite,
    mvnormal_log_pdf,
    mvnormal_sample,
    mvt_log_pdf,
    mvt_sample,
)


# -- beta in mean / precision form ------------------------------------------


def test_beta_uniform_case_is_zero():
    assert beta_mp_log_pdf(0.3, BetaMP(0.5, 2.0)) == pytest.approx(0.0, abs=1e-14)


def test_beta_22_at_mode():
    assert beta_mp_log_pdf(0.5, BetaMP(0.5, 4.0)) == pytest.approx(np.log(1.5), abs=1e-12)


def test_beta_against_arbitrary_precision_oracle():
    mpmath.mp.dps = 40
    y, mu, phi = mpmath.mpf("0.5"), mpmath.mpf("0.5"), mpmath.mpf(49)
    a, b = mu * phi, (1 - mu) * phi
    oracle = mpmath.loggamma(phi) - mpmath.loggamma(a) - mpmath.loggamma(b) + (a - 1) * mpmath.log(y) + (b - 1) * mpmath.log(1 - y)
    assert beta_mp_log_pdf(0.5, BetaMP(0.5, 49.0)) == pytest.approx(float(oracle), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.01, 0.99),
    st.floats(0.02, 0.98),
    st.floats(0.1, 500.0),
)
def test_beta_matches_scipy(y, mu, phi):
    ref = stats.beta.logpdf(y, mu * phi, (1 - mu) * phi)
    assert beta_mp_log_pdf(y, BetaMP(mu, phi)) == pytest.approx(ref, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("mu,phi,var", [(0.5, 49.0, 0.005), (0.2, 4.0, 0.032)])
def test_beta_moments(mu, phi, var):
    m, v = beta_mp_moments(BetaMP(mu, phi))
    assert m == mu
    assert v == pytest.approx(var, rel=1e-12)


def test_beta_variance_decreases_in_phi():
    v = [beta_mp_moments(BetaMP(0.5, phi))[1] for phi in np.geomspace(1, 1e6, 30)]
    assert np.all(np.diff(v) < 0)
    assert v[-1] < 1e-6


def test_beta_sample_moments():
    draws = beta_mp_sample(BetaMP(0.5, 49.0), np.random.default_rng(1), size=100_000)
    assert abs(draws.mean() - 0.5) < 0.005
    assert draws.var() == pytest.approx(0.005, rel=0.1)


def test_beta_sample_support_and_determinism():
    law = BetaMP(0.9, 10.0)
    a = beta_mp_sample(law, np.random.default_rng(3), size=10_000)
    b = beta_mp_sample(law, np.random.default_rng(3), size=10_000)
    assert np.all((a > 0) & (a < 1))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("mu,phi", [(0.0, 1.0), (1.0, 1.0), (0.5, 0.0), (0.5, -1.0), (0.5, np.inf)])
def test_beta_rejects_boundary(mu, phi):
    with pytest.raises(ValueError):
        BetaMP(mu, phi)


def test_beta_density_rejects_y_on_boundary():
    with pytest.raises(ValueError):
        beta_mp_log_pdf(1.0, BetaMP(0.5, 2.0))


# -- multivariate t and normal --------------------------------------------


def test_cauchy_at_zero():
    law = MvT(1.0, [0.0], [[1.0]])
    assert mvt_log_pdf([0.0], law) == pytest.approx(-np.log(np.pi), abs=1e-12)


def test_mvt_large_dof_normal_limit():
    law = MvT(1e6, np.zeros(2), np.eye(2))
    assert mvt_log_pdf(np.zeros(2), law) == pytest.approx(-np.log(2 * np.pi), abs=1e-4)
    x = np.array([0.7, -1.2])
    assert mvt_log_pdf(x, law) == pytest.approx(mvnormal_log_pdf(x, np.zeros(2), np.eye(2)), abs=1e-3)


def test_mvt_matches_scipy():
    scale = np.array([[2.0, 0.3], [0.3, 0.5]])
    law = MvT(4.0, [1.0, -1.0], scale)
    x = np.array([0.2, 0.4])
    ref = stats.multivariate_t(loc=[1.0, -1.0], shape=scale, df=4.0).logpdf(x)
    assert mvt_log_pdf(x, law) == pytest.approx(ref, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(0.5, 50))
def test_mvt_symmetric(x, dof):
    law = MvT(dof, np.zeros(2), np.array([[1.0, 0.4], [0.4, 2.0]]))
    x = np.array(x)
    assert mvt_log_pdf(x, law) == pytest.approx(mvt_log_pdf(-x, law), rel=1e-12, abs=1e-12)


def test_normal_standard_value_and_mode():
    assert mvnormal_log_pdf([0.0], [0.0], [[1.0]]) == pytest.approx(-0.918938533204673, abs=1e-12)
    cov = np.array([[1.0, 0.5], [0.5, 2.0]])
    at_mean = mvnormal_log_pdf([1.0, 2.0], [1.0, 2.0], cov)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert mvnormal_log_pdf([1.0, 2.0] + rng.normal(size=2), [1.0, 2.0], cov) < at_mean


def test_normal_sample_covariance():
    cov = np.array([[1.0, -0.3], [-0.3, 0.2]])
    draws = mvnormal_sample(np.zeros(2), cov, np.random.default_rng(5), size=100_000)
    emp = np.cov(draws.T)
    assert np.all(np.abs(emp - cov) <= 0.05 * np.abs(cov))


def test_mvt_sample_marginal_ks():
    law = MvT(10.0, [0.0], [[1.0]])
    draws = mvt_sample(law, np.random.default_rng(7), size=20_000)[:, 0]
    assert stats.kstest(draws, stats.t(10).cdf).pvalue > 0.01


# -- inverse Wishart -----------------------------------------------------------


def test_inv_wishart_mean():
    law = InvWishart(np.diag([20.0, 20.0]), 5.0)
    rng = np.random.default_rng(11)
    draws = np.array([inv_wishart_sample(law, rng) for _ in range(100_000)])
    mean = draws.mean(axis=0)
    assert np.all(np.abs(np.diag(mean) - 10.0) <= 0.5)
    assert np.all(np.abs(draws - np.swapaxes(draws, 1, 2)) == 0)


def test_inv_wishart_matches_scipy_density():
    psi = np.array([[3.0, 0.4], [0.4, 1.0]])
    x = np.array([[1.2, -0.1], [-0.1, 0.6]])
    law = InvWishart(psi, 6.0)
    assert inv_wishart_log_pdf(x, law) == pytest.approx(stats.invwishart(df=6.0, scale=psi).logpdf(x), rel=1e-10)


def test_inv_wishart_one_dimensional_integrates_to_one():
    law = InvWishart(np.array([[2.0]]), 3.0)
    total, _ = integrate.quad(lambda s: np.exp(inv_wishart_log_pdf(np.array([[s]]), law)), 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_inv_wishart_reduces_to_scaled_inverse_chi_square():
    # 1-d IW(psi, c) is inverse gamma with shape c / 2 and scale psi / 2
    law = InvWishart(np.array([[2.0]]), 3.0)
    for s in (0.1, 0.7, 3.0, 20.0):
        ref = stats.invgamma(1.5, scale=1.0).logpdf(s)
        assert inv_wishart_log_pdf(np.array([[s]]), law) == pytest.approx(ref, rel=1e-10)


def test_inv_wishart_validation():
    with pytest.raises(ValueError):
        InvWishart(np.eye(2), 0.5)
    with pytest.raises(ValueError):
        InvWishart(np.array([[1.0, 2.0], [2.0, 1.0]]), 5.0)
    assert not is_positive_definite(np.array([[1.0, 2.0], [2.0, 1.0]]))


# -- gamma family --------------------------------------------------------------


def test_exponential_limit_at_zero():
    assert gamma_log_pdf(1e-12, 1.0, 2.0) == pytest.approx(np.log(2.0), abs=1e-9)


def test_gamma_mean_one():
    draws = gamma_sample(5.0, 5.0, np.random.default_rng(2), size=100_000)
    assert draws.mean() == pytest.approx(1.0, rel=0.02)


def test_gamma_at_mode_closed_form():
    a, b = 3.5, 2.0
    x = (a - 1) / b
    from scipy.special import gammaln

    ref = a * np.log(b) - gammaln(a) + (a - 1) * np.log(x) - b * x
    assert gamma_log_pdf(x, a, b) == pytest.approx(ref, rel=1e-13)


def test_inverse_gamma_matches_scipy():
    for x in (0.5, 49.0, 1000.0):
        ref = stats.invgamma(0.01, scale=0.01).logpdf(x)
        assert inv_gamma_log_pdf(x, 0.01, 0.01) == pytest.approx(ref, rel=1e-10)
