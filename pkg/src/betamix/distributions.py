"""Density and sampling kernels used by the mixed beta regression model.

Conventions
-----------
* Gamma laws use the shape-rate convention: ``Gamma(a, b)`` has mean ``a / b``.
  ``IG(e, e)`` is the law of ``1 / X`` with ``X ~ Gamma(e, e)``.
* ``InvWishart(psi, c)`` is the law of ``X`` where ``X^{-1}`` is Wishart with
  scale ``psi^{-1}`` and ``c`` degrees of freedom, so that
  ``E[X] = psi / (c - q - 1)``.  This is the convention of the BUGS idiom
  ``T ~ dwish(R, c); S <- inverse(T)`` with ``R = psi``.  In one dimension it
  reduces to a scaled inverse chi-square, i.e. ``IG(c / 2, psi / 2)``.

Everything is evaluated in log space through ``gammaln``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, multigammaln

LOG_2PI = np.log(2.0 * np.pi)

__all__ = [
    "BetaMP",
    "MvT",
    "InvWishart",
    "beta_mp_log_pdf",
    "beta_mp_moments",
    "beta_mp_sample",
    "mvt_log_pdf",
    "mvt_sample",
    "mvnormal_log_pdf",
    "mvnormal_sample",
    "inv_wishart_log_pdf",
    "inv_wishart_sample",
    "gamma_log_pdf",
    "gamma_sample",
    "inv_gamma_log_pdf",
    "is_positive_definite",
]


def is_positive_definite(a: np.ndarray) -> bool:
    """Check symmetry and positive definiteness via the leading minors (Cholesky)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        return False
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


def _as_spd(a, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not is_positive_definite(a):
        raise ValueError(f"{name} must be a symmetric positive-definite matrix")
    return a


@dataclass(frozen=True)
class BetaMP:
    """Beta law addressed by its mean ``mu`` and precision ``phi``."""

    mu: float
    phi: float

    def __post_init__(self):
        if not (0.0 < self.mu < 1.0):
            raise ValueError(f"mu must lie in (0, 1), got {self.mu}")
        if not (self.phi > 0.0 and np.isfinite(self.phi)):
            raise ValueError(f"phi must be positive and finite, got {self.phi}")

    @property
    def shapes(self) -> tuple[float, float]:
        return self.mu * self.phi, (1.0 - self.mu) * self.phi


@dataclass(frozen=True, eq=False)
class MvT:
    """Multivariate Student-t with ``dof``, ``location`` and ``scale`` matrix."""

    dof: float
    location: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if not self.dof > 0:
            raise ValueError(f"dof must be positive, got {self.dof}")
        scale = _as_spd(self.scale, "scale")
        loc = np.atleast_1d(np.asarray(self.location, dtype=float))
        if loc.shape != (scale.shape[0],):
            raise ValueError("location and scale dimensions disagree")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "location", loc)

    @property
    def dim(self) -> int:
        return self.scale.shape[0]


@dataclass(frozen=True, eq=False)
class InvWishart:
    """Inverse Wishart with scale ``psi`` and ``dof`` degrees of freedom."""

    scale: np.ndarray
    dof: float

    def __post_init__(self):
        scale = _as_spd(self.scale, "scale")
        if not self.dof > scale.shape[0] - 1:
            raise ValueError(
                f"dof must exceed dimension - 1 = {scale.shape[0] - 1}, got {self.dof}"
            )
        object.__setattr__(self, "scale", scale)

    @property
    def dim(self) -> int:
        return self.scale.shape[0]

    def mean(self) -> np.ndarray:
        q = self.dim
        if self.dof <= q + 1:
            raise ValueError("mean is undefined unless dof > dim + 1")
        return self.scale / (self.dof - q - 1)


# ---------------------------------------------------------------- beta (mu, phi)


def beta_mp_log_pdf(y, law: BetaMP | None = None, *, mu=None, phi=None):
    """Log density of the mean-precision beta law.

    Either pass a :class:`BetaMP` or broadcastable arrays ``mu`` and ``phi``
    (the vectorised path used by the likelihood).
    """
    if law is not None:
        mu, phi = law.mu, law.phi
    y = np.asarray(y, dtype=float)
    if np.any((y <= 0.0) | (y >= 1.0)) or np.any(np.isnan(y)):
        raise ValueError("beta density requires 0 < y < 1")
    a = np.asarray(mu, dtype=float) * phi
    b = (1.0 - np.asarray(mu, dtype=float)) * phi
    out = (
        gammaln(phi)
        - gammaln(a)
        - gammaln(b)
        + (a - 1.0) * np.log(y)
        + (b - 1.0) * np.log1p(-y)
    )
    return float(out) if np.ndim(out) == 0 else out


def beta_mp_moments(law: BetaMP) -> tuple[float, float]:
    return law.mu, law.mu * (1.0 - law.mu) / (1.0 + law.phi)


def beta_mp_sample(law: BetaMP, rng: np.random.Generator, size=None):
    """Draw from ``beta(mu * phi, (1 - mu) * phi)``; never returns 0 or 1."""
    a, b = law.shapes
    return _beta_open(rng, a, b, size)


def _beta_open(rng, a, b, size=None):
    x = rng.beta(a, b, size=size)
    lo = np.finfo(float).tiny
    hi = 1.0 - np.finfo(float).epsneg
    return np.clip(x, lo, hi)


# ---------------------------------------------------------------- multivariate


def mvt_log_pdf(x, law: MvT) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    q = law.dim
    if x.shape[-1] != q:
        raise ValueError(f"expected a vector of length {q}, got {x.shape[-1]}")
    chol = np.linalg.cholesky(law.scale)
    dev = np.linalg.solve(chol, (x - law.location).T).T
    maha = np.sum(dev**2, axis=-1)
    nu = law.dof
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    out = (
        gammaln(0.5 * (nu + q))
        - gammaln(0.5 * nu)
        - 0.5 * q * np.log(nu * np.pi)
        - 0.5 * log_det
        - 0.5 * (nu + q) * np.log1p(maha / nu)
    )
    return float(out) if np.ndim(out) == 0 else out


def mvt_sample(law: MvT, rng: np.random.Generator, size: int | None = None):
    """Draw via the normal / gamma scale mixture."""
    n = 1 if size is None else size
    z = mvnormal_sample(np.zeros(law.dim), law.scale, rng, size=n)
    lam = rng.gamma(0.5 * law.dof, 2.0 / law.dof, size=n)
    out = law.location + z / np.sqrt(lam)[:, None]
    return out[0] if size is None else out


def mvnormal_log_pdf(x, mean, cov) -> float:
    cov = _as_spd(cov, "cov")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    q = cov.shape[0]
    if x.shape[-1] != q or mean.shape[-1] != q:
        raise ValueError("dimension mismatch between x, mean and cov")
    chol = np.linalg.cholesky(cov)
    dev = np.linalg.solve(chol, (x - mean).T).T
    maha = np.sum(dev**2, axis=-1)
    out = -0.5 * (q * LOG_2PI + 2.0 * np.sum(np.log(np.diag(chol))) + maha)
    return float(out) if np.ndim(out) == 0 else out


def mvnormal_sample(mean, cov, rng: np.random.Generator, size: int | None = None):
    cov = _as_spd(cov, "cov")
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    chol = np.linalg.cholesky(cov)
    n = 1 if size is None else size
    z = rng.standard_normal((n, cov.shape[0]))
    out = mean + z @ chol.T
    return out[0] if size is None else out


# ---------------------------------------------------------------- inverse Wishart


def inv_wishart_log_pdf(x, law: InvWishart) -> float:
    x = _as_spd(x, "x")
    q, c, psi = law.dim, law.dof, law.scale
    _, logdet_psi = np.linalg.slogdet(psi)
    _, logdet_x = np.linalg.slogdet(x)
    trace = np.trace(np.linalg.solve(x, psi))
    return float(
        0.5 * c * logdet_psi
        - 0.5 * c * q * np.log(2.0)
        - multigammaln(0.5 * c, q)
        - 0.5 * (c + q + 1) * logdet_x
        - 0.5 * trace
    )


def _wishart_chol_factor(dof: float, q: int, rng: np.random.Generator) -> np.ndarray:
    """Bartlett factor ``A`` with ``A A'`` Wishart(I, dof)."""
    a = np.zeros((q, q))
    idx = np.arange(q)
    a[idx, idx] = np.sqrt(rng.chisquare(dof - idx))
    low = np.tril_indices(q, -1)
    a[low] = rng.standard_normal(len(low[0]))
    return a


def inv_wishart_sample(law: InvWishart, rng: np.random.Generator) -> np.ndarray:
    """Draw ``X`` with ``X^{-1} ~ Wishart(psi^{-1}, c)`` by the Bartlett construction."""
    q = law.dim
    # X^{-1} = L^{-T} A A' L^{-1} with psi = L L'; so X = L A^{-T} A^{-1} L'.
    chol = np.linalg.cholesky(law.scale)
    a = _wishart_chol_factor(law.dof, q, rng)
    m = np.linalg.solve(a, chol.T).T  # L A^{-T}
    out = m @ m.T
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------- gamma family


def _check_gamma(shape, rate):
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ValueError("gamma shape and rate must be positive")


def gamma_log_pdf(x, shape, rate):
    _check_gamma(shape, rate)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x
    out = np.where(x > 0, out, -np.inf)
    return float(out) if np.ndim(out) == 0 else out


def gamma_sample(shape, rate, rng: np.random.Generator, size=None):
    _check_gamma(shape, rate)
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size=size)


def inv_gamma_log_pdf(x, shape, rate):
    """Log density of ``1 / X`` for ``X ~ Gamma(shape, rate)``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = gamma_log_pdf(1.0 / x, shape, rate) - 2.0 * np.log(x)
    out = np.where(x > 0, out, -np.inf)
    return float(out) if np.ndim(out) == 0 else out
