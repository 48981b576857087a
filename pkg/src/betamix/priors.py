"""Prior catalog for the mixed beta regression.

Four priors are offered for a common precision ``phi``:

* ``InverseGamma(eps)``: ``phi ~ IG(eps, eps)``.
* ``UniformSquared(a)``: ``phi = U**2`` with ``U ~ U(0, a)``.
* ``ScaledBetaSquared(a, eps)``: ``phi = (a B)**2`` with
  ``B ~ beta(1 + eps, 1 + eps)``; ``eps = 0`` gives ``UniformSquared(a)``.
* ``LogT(nu, mu, sigma2)``: ``log(phi) ~ t(nu, mu, sigma2)``.

Densities of ``phi`` include the Jacobian of the transform.  Support
violations give ``-inf`` so Metropolis steps reject them naturally.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from scipy import stats
from scipy.special import betaln, gammaln

from .distributions import (
    InvWishart,
    MvT,
    inv_gamma_log_pdf,
    inv_wishart_log_pdf,
    is_positive_definite,
    mvnormal_log_pdf,
    mvt_log_pdf,
)
from .model import ModelSpec, ParamState

__all__ = [
    "InverseGamma",
    "UniformSquared",
    "ScaledBetaSquared",
    "LogT",
    "PhiPrior",
    "PriorCatalog",
    "PRIOR_PRESETS",
    "phi_log_prior",
    "phi_prior_sample",
    "log_prior",
    "log_prior_blocks",
    "as_vector",
    "as_matrix",
]


@dataclass(frozen=True)
class InverseGamma:
    eps: float = 0.01

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("inverse gamma needs eps > 0")


@dataclass(frozen=True)
class UniformSquared:
    a: float = 50.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("uniform squared needs a > 0")


@dataclass(frozen=True)
class ScaledBetaSquared:
    a: float = 50.0
    eps: float = 0.5

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("scaled beta squared needs a > 0")
        if not self.eps >= 0:
            raise ValueError("scaled beta squared needs eps >= 0")


@dataclass(frozen=True)
class LogT:
    nu: float = 10.0
    mu: float = 0.0
    sigma2: float = 10.0

    def __post_init__(self):
        if not (self.nu > 0 and self.sigma2 > 0):
            raise ValueError("log-t prior needs nu > 0 and sigma2 > 0")


PhiPrior = Union[InverseGamma, UniformSquared, ScaledBetaSquared, LogT]

PHI_PRIOR_NAMES = {
    "inverse_gamma": InverseGamma,
    "uniform_squared": UniformSquared,
    "scaled_beta_squared": ScaledBetaSquared,
    "log_t": LogT,
}


def phi_log_prior(variant: PhiPrior, phi: float) -> float:
    """Log density of ``phi`` under one of the four variants."""
    if not (phi > 0 and np.isfinite(phi)):
        return -np.inf
    if isinstance(variant, InverseGamma):
        return float(inv_gamma_log_pdf(phi, variant.eps, variant.eps))
    if isinstance(variant, (UniformSquared, ScaledBetaSquared)):
        a = variant.a
        if phi >= a * a:
            return -np.inf
        root = np.sqrt(phi)
        jac = -np.log(2.0 * a * root)
        if isinstance(variant, UniformSquared) or variant.eps == 0:
            return float(jac)
        e = variant.eps
        u = root / a
        return float(e * (np.log(u) + np.log1p(-u)) - betaln(1.0 + e, 1.0 + e) + jac)
    if isinstance(variant, LogT):
        z = np.log(phi)
        scale = np.sqrt(variant.sigma2)
        return float(stats.t.logpdf(z, variant.nu, loc=variant.mu, scale=scale) - z)
    raise TypeError(f"unknown phi prior {variant!r}")


def phi_prior_sample(variant: PhiPrior, rng: np.random.Generator, size=None):
    if isinstance(variant, InverseGamma):
        with np.errstate(divide="ignore"):
            return 1.0 / rng.gamma(variant.eps, 1.0 / variant.eps, size=size)
    if isinstance(variant, UniformSquared):
        return (variant.a * rng.uniform(size=size)) ** 2
    if isinstance(variant, ScaledBetaSquared):
        e = 1.0 + variant.eps
        return (variant.a * rng.beta(e, e, size=size)) ** 2
    if isinstance(variant, LogT):
        t = rng.standard_t(variant.nu, size=size)
        return np.exp(variant.mu + np.sqrt(variant.sigma2) * t)
    raise TypeError(f"unknown phi prior {variant!r}")


def phi_prior_support(variant: PhiPrior) -> tuple[float, float]:
    if isinstance(variant, (UniformSquared, ScaledBetaSquared)):
        return 0.0, variant.a**2
    return 0.0, np.inf


# ---------------------------------------------------------------- catalog


def as_vector(x, n: int) -> np.ndarray:
    """Broadcast a scalar or length-``n`` sequence to a vector."""
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        return np.full(n, float(v))
    if v.shape != (n,):
        raise ValueError(f"expected {n} values, got {v.shape}")
    return v


def as_matrix(x, n: int) -> np.ndarray:
    """Scalar -> ``x * I``; vector -> ``diag``; larger matrix -> leading block."""
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        return float(v) * np.eye(n)
    if v.ndim == 1:
        v = np.diag(v)
    if v.shape[0] < n or v.shape[0] != v.shape[1]:
        raise ValueError(f"matrix of shape {v.shape} cannot provide a {n}x{n} block")
    return v[:n, :n].copy()


@dataclass(frozen=True)
class PriorCatalog:
    """Hyperparameters for every block.

    Vector and matrix hyperparameters may be scalars (broadcast to ``x * I``)
    so one catalog serves designs of any width.  ``sigma_d_*`` / ``delta_*``
    default to the location values when left as ``None``.
    """

    beta_family: str = "t"
    beta_dof: float = 10.0
    beta_mean: object = 0.0
    beta_scale: object = 10.0
    delta_family: str | None = None
    delta_dof: float | None = None
    delta_mean: object = None
    delta_scale: object = None
    sigma_b_scale: object = 20.0
    sigma_b_dof: float = 5.0
    sigma_d_scale: object = None
    sigma_d_dof: float | None = None
    nu_rate: float = 0.1
    nu_truncate: bool = False
    phi_prior: PhiPrior = field(default_factory=ScaledBetaSquared)

    def __post_init__(self):
        for fam in (self.beta_family, self.delta_family):
            if fam not in (None, "t", "normal"):
                raise ValueError(f"unknown fixed-effect prior family {fam!r}")
        if not self.beta_dof > 0:
            raise ValueError("beta_dof must be positive")
        if self.delta_dof is not None and not self.delta_dof > 0:
            raise ValueError("delta_dof must be positive")
        if not self.nu_rate > 0:
            raise ValueError("nu_rate must be positive")
        for name in ("beta_scale", "delta_scale", "sigma_b_scale", "sigma_d_scale"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.asarray(val, dtype=float)
            mat = as_matrix(arr, arr.shape[0] if arr.ndim else 1)
            if not is_positive_definite(mat):
                raise ValueError(f"{name} must be positive definite")
        if not self.sigma_b_dof > 0:
            raise ValueError("sigma_b_dof must be positive")

    def with_phi(self, variant: PhiPrior) -> "PriorCatalog":
        return replace(self, phi_prior=variant)

    # resolved hyperparameters -------------------------------------------------
    def fixed_effect_law(self, which: str, dim: int):
        if which == "beta":
            fam, dof, mean, scale = self.beta_family, self.beta_dof, self.beta_mean, self.beta_scale
        else:
            fam = self.delta_family or self.beta_family
            dof = self.delta_dof if self.delta_dof is not None else self.beta_dof
            mean = self.delta_mean if self.delta_mean is not None else self.beta_mean
            scale = self.delta_scale if self.delta_scale is not None else self.beta_scale
        return fam, dof, as_vector(mean, dim), as_matrix(scale, dim)

    def sigma_law(self, which: str, dim: int) -> InvWishart:
        if which == "b":
            scale, dof = self.sigma_b_scale, self.sigma_b_dof
        else:
            scale = self.sigma_d_scale if self.sigma_d_scale is not None else self.sigma_b_scale
            dof = self.sigma_d_dof if self.sigma_d_dof is not None else self.sigma_b_dof
        return InvWishart(as_matrix(scale, dim), dof)

    def nu_log_prior(self, nu: float) -> float:
        a = self.nu_rate
        lower = 2.0 if self.nu_truncate else 0.0
        if not (nu > lower and np.isfinite(nu)):
            return -np.inf
        return float(np.log(a) - a * (nu - lower))

    def nu_prior_sample(self, rng: np.random.Generator) -> float:
        lower = 2.0 if self.nu_truncate else 0.0
        return lower + rng.exponential(1.0 / self.nu_rate)


PRIOR_PRESETS = {
    "paper-sim": PriorCatalog(
        beta_dof=10.0,
        beta_mean=0.0,
        beta_scale=10.0,
        sigma_b_scale=20.0,
        sigma_b_dof=5.0,
        nu_rate=0.1,
        phi_prior=ScaledBetaSquared(50.0, 0.5),
    ),
    "paper-prater": PriorCatalog(
        beta_dof=10.0,
        beta_mean=0.0,
        beta_scale=10.0,
        sigma_b_scale=20.0,
        sigma_b_dof=4.0,
        nu_rate=0.1,
        phi_prior=ScaledBetaSquared(50.0, 0.5),
    ),
}


def _fixed_log_prior(catalog: PriorCatalog, which: str, x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    fam, dof, mean, scale = catalog.fixed_effect_law(which, x.size)
    if fam == "t":
        return mvt_log_pdf(x, MvT(dof, mean, scale))
    return mvnormal_log_pdf(x, mean, scale)


def _re_log_density(effects, Sigma, nu, lam, law: str, augmented: bool) -> float:
    if effects.shape[1] == 0 or effects.shape[0] == 0:
        return 0.0
    q = effects.shape[1]
    if law == "normal":
        return float(np.sum(mvnormal_log_pdf(effects, np.zeros(q), Sigma)))
    if not augmented:
        return float(np.sum(mvt_log_pdf(effects, MvT(nu, np.zeros(q), Sigma))))
    # N(b_i; 0, Sigma / lambda_i) + Gamma(lambda_i; nu/2, nu/2)
    chol = np.linalg.cholesky(Sigma)
    dev = np.linalg.solve(chol, effects.T).T
    maha = np.sum(dev**2, axis=1)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    normal = -0.5 * (q * np.log(2 * np.pi) + logdet - q * np.log(lam) + lam * maha)
    h = 0.5 * nu
    gam = h * np.log(h) - gammaln(h) + (h - 1.0) * np.log(lam) - h * lam
    return float(np.sum(normal) + np.sum(gam))


def log_prior_blocks(
    catalog: PriorCatalog, spec: ModelSpec, state: ParamState, augmented: bool = False
) -> dict[str, float]:
    """Prior log density split by block (random-effect terms included).

    ``augmented=True`` scores the random effects through the normal / gamma
    pair used by the sampler instead of the marginal t density.
    """
    out = {"beta": _fixed_log_prior(catalog, "beta", np.asarray(state.beta, dtype=float))}
    if spec.q:
        if not is_positive_definite(state.Sigma_b):
            return {**out, "Sigma_b": -np.inf}
        out["Sigma_b"] = inv_wishart_log_pdf(state.Sigma_b, catalog.sigma_law("b", spec.q))
        if spec.re_law_b == "t":
            out["nu_b"] = catalog.nu_log_prior(state.nu_b)
            if not np.isfinite(out["nu_b"]):
                return out
        out["b"] = _re_log_density(
            state.b, state.Sigma_b, state.nu_b, state.lambda_b, spec.re_law_b, augmented
        )
    if not spec.model2:
        out["phi"] = phi_log_prior(catalog.phi_prior, state.phi)
        return out
    out["delta"] = _fixed_log_prior(catalog, "delta", np.asarray(state.delta, dtype=float))
    if spec.q_star:
        if spec.tie_random_effects:
            Sigma, nu = state.Sigma_b, state.nu_b
        else:
            Sigma, nu = state.Sigma_d, state.nu_d
            if not is_positive_definite(Sigma):
                return {**out, "Sigma_d": -np.inf}
            out["Sigma_d"] = inv_wishart_log_pdf(Sigma, catalog.sigma_law("d", spec.d_dim))
            if spec.re_law_d == "t":
                out["nu_d"] = catalog.nu_log_prior(nu)
                if not np.isfinite(out["nu_d"]):
                    return out
        out["d"] = _re_log_density(state.d, Sigma, nu, state.lambda_d, spec.law_d, augmented)
    return out


def log_prior(catalog: PriorCatalog, spec: ModelSpec, state: ParamState, augmented: bool = False) -> float:
    return float(sum(log_prior_blocks(catalog, spec, state, augmented).values()))
