"""Metropolis-within-Gibbs sampler for mixed beta regression.

One sweep visits, in order: ``beta``; every ``b_i``; ``Sigma_b`` (conjugate);
the mixing scalars ``lambda_i`` (conjugate, t law only); ``nu_b`` (t law
only); then the precision block, either ``phi`` or ``delta``, every ``d_i``,
``Sigma_d``, ``lambda_d``, ``nu_d``.  When a submodel has both a fixed and a
random intercept, an extra scalar move right after the random-effect update
shifts the fixed intercept against all random intercepts (see
:meth:`GibbsSampler.update_shift`).

Multivariate-t random effects are represented as ``b_i | lambda_i ~
N(0, Sigma / lambda_i)`` with ``lambda_i ~ Gamma(nu / 2, nu / 2)``, which keeps
the inverse-Wishart update of ``Sigma`` exact.  The ``b_i`` are conditionally
independent given the other blocks, so all groups are proposed at once and
accepted or rejected group by group.

Random-walk proposals adapt during burn-in only.  Every ``adapt_window``
iterations the proposal covariance of each vector block is refreshed, by
default from the inverse conditional expected information at the current
state (``proposal_covariance="information"``) or, optionally, from the
empirical covariance of the last ``adapt_window`` draws
(``"empirical"``).  The scale follows a Robbins-Monro recursion towards the
target acceptance rate.  Kernels are frozen from the first retained
iteration on.
"""
from __future__ import annotations

import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, gammaln, polygamma

from .distributions import InvWishart, inv_wishart_sample
from .model import (
    DomainError,
    GroupedDataset,
    ModelSpec,
    ParamState,
    TAU_MAX,
    beta_loglik_terms,
    log_likelihood,
)
from .priors import PriorCatalog, phi_log_prior, phi_prior_support

logger = logging.getLogger(__name__)

__all__ = [
    "SamplerConfig",
    "SamplerError",
    "Trace",
    "GibbsSampler",
    "initial_state",
    "param_layout",
    "run_chain",
    "run_ensemble",
    "sample_sigma_conditional",
    "sample_lambda_conditional",
    "nu_log_conditional",
    "metropolis_accept",
]

BLOCKS = ("beta", "b", "Sigma_b", "lambda_b", "nu_b", "phi", "delta", "d", "Sigma_d", "lambda_d", "nu_d")


class SamplerError(RuntimeError):
    """A chain cannot start or continue (e.g. non-finite log posterior)."""


@dataclass
class SamplerConfig:
    n_iterations: int = 20000
    burn_in: int | None = None
    thin: int = 1
    n_chains: int = 2
    seed: int = 0
    adapt_window: int = 250
    target_accept_vector: float = 0.234
    target_accept_scalar: float = 0.44
    initial_step_sizes: dict = field(default_factory=dict)
    use_likelihood: bool = True
    fixed: tuple = ()
    jitter: bool = True
    n_jobs: int = 1
    proposal_covariance: str = "information"

    def __post_init__(self):
        if self.burn_in is None:
            self.burn_in = self.n_iterations // 10
        if self.n_iterations < 1 or self.thin < 1 or self.n_chains < 1 or self.adapt_window < 1:
            raise ValueError("iterations, thin, chains and adapt_window must be positive")
        if not (0 <= self.burn_in < self.n_iterations):
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iterations")
        for t in (self.target_accept_vector, self.target_accept_scalar):
            if not 0 < t < 1:
                raise ValueError("target acceptance rates must lie in (0, 1)")
        if self.proposal_covariance not in ("information", "empirical"):
            raise ValueError("proposal_covariance must be 'information' or 'empirical'")
        unknown = set(self.fixed) - set(BLOCKS)
        if unknown:
            raise ValueError(f"unknown blocks in fixed: {sorted(unknown)}")
        self.fixed = tuple(self.fixed)
        if self.n_retained < 1:
            raise ValueError("configuration retains no draws")
        if self.n_retained < 100:
            warnings.warn(f"only {self.n_retained} draws will be retained (< 100)", stacklevel=2)

    @property
    def n_retained(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fixed"] = list(self.fixed)
        return d


# ---------------------------------------------------------------- layout / trace


def param_layout(spec: ModelSpec, m: int) -> list[tuple[str, tuple]]:
    """Blocks recorded in a trace, with their shapes."""
    out = [("beta", (spec.p,))]
    if spec.q:
        out += [("b", (m, spec.q)), ("Sigma_b", (spec.q, spec.q))]
        if spec.re_law_b == "t":
            out.append(("nu_b", ()))
    if not spec.model2:
        out.append(("phi", ()))
        return out
    if spec.p_star:
        out.append(("delta", (spec.p_star,)))
    if spec.q_star:
        out.append(("d", (m, spec.d_dim)))
        if not spec.tie_random_effects:
            out.append(("Sigma_d", (spec.d_dim, spec.d_dim)))
            if spec.re_law_d == "t":
                out.append(("nu_d", ()))
    return out


def _block_names(block: str, shape: tuple) -> list[str]:
    if shape == ():
        return [block]
    if block.startswith("Sigma"):
        k = shape[0]
        return [f"{block}.{i + 1}.{j + 1}" for i in range(k) for j in range(i, k)]
    if len(shape) == 1:
        return [f"{block}.{i + 1}" for i in range(shape[0])]
    return [f"{block}.{i + 1}.{j + 1}" for i in range(shape[0]) for j in range(shape[1])]


def _flatten_block(block: str, value) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if block.startswith("Sigma"):
        return v[np.triu_indices(v.shape[0])]
    return v.ravel()


def _unflatten_block(block: str, shape: tuple, flat: np.ndarray) -> np.ndarray:
    if shape == ():
        return flat[..., 0]
    if block.startswith("Sigma"):
        k = shape[0]
        out = np.zeros(flat.shape[:-1] + (k, k))
        iu = np.triu_indices(k)
        out[..., iu[0], iu[1]] = flat
        out[..., iu[1], iu[0]] = flat
        return out
    return flat.reshape(flat.shape[:-1] + shape)


@dataclass(eq=False)
class Trace:
    """Retained draws of one chain, flattened to one row per draw.

    Symmetric matrices keep their upper triangle only (``Sigma_b.1.1``,
    ``Sigma_b.1.2``, ``Sigma_b.2.2``).  Mixing scalars are not recorded.
    """

    layout: list
    values: np.ndarray
    deviance: np.ndarray
    acceptance: dict = field(default_factory=dict)
    chain_id: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layout = [(b, tuple(s)) for b, s in self.layout]
        self.values = np.asarray(self.values, dtype=float).reshape(-1, len(self.names))
        self.deviance = np.asarray(self.deviance, dtype=float)
        if self.deviance.shape != (self.values.shape[0],):
            raise ValueError("one deviance per draw is required")

    @property
    def names(self) -> list[str]:
        return [n for b, s in self.layout for n in _block_names(b, s)]

    def __len__(self) -> int:
        return self.values.shape[0]

    def _slices(self) -> dict:
        out, start = {}, 0
        for b, s in self.layout:
            k = len(_block_names(b, s))
            out[b] = (slice(start, start + k), s)
            start += k
        return out

    def has(self, block: str) -> bool:
        return block in self._slices()

    def column(self, name: str) -> np.ndarray:
        if name == "deviance":
            return self.deviance
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}; available: {', '.join(self.names)}") from None

    def block(self, block: str) -> np.ndarray:
        """Draws of one block with its natural shape, e.g. ``(n, q, q)``."""
        sl, shape = self._slices()[block]
        return _unflatten_block(block, shape, self.values[:, sl])

    def state(self, k: int) -> ParamState:
        sl = self._slices()
        get = lambda b: _unflatten_block(b, sl[b][1], self.values[k, sl[b][0]])
        m = self.meta.get("m")
        if m is None:
            m = next((s[0] for b, s in self.layout if b in ("b", "d")), 1)
        beta = get("beta")
        b = get("b") if "b" in sl else np.zeros((m, 0))
        d = get("d") if "d" in sl else np.zeros((m, 0))
        return ParamState(
            beta=beta,
            b=b,
            Sigma_b=get("Sigma_b") if "Sigma_b" in sl else np.zeros((0, 0)),
            nu_b=float(get("nu_b")) if "nu_b" in sl else np.inf,
            lambda_b=np.ones(m),
            phi=float(get("phi")) if "phi" in sl else None,
            delta=get("delta") if "delta" in sl else np.zeros(0),
            d=d,
            Sigma_d=get("Sigma_d") if "Sigma_d" in sl else np.zeros((0, 0)),
            nu_d=float(get("nu_d")) if "nu_d" in sl else np.inf,
            lambda_d=np.ones(m),
        )

    def states(self):
        for k in range(len(self)):
            yield self.state(k)

    def mean_state(self) -> ParamState:
        """Componentwise posterior mean (the mean of SPD matrices stays SPD)."""
        mean = Trace(self.layout, self.values.mean(axis=0, keepdims=True), [0.0], meta=self.meta)
        return mean.state(0)

    @staticmethod
    def merge(traces) -> "Trace":
        traces = list(traces)
        if not traces:
            raise ValueError("nothing to merge")
        layout = traces[0].layout
        if any(t.layout != layout for t in traces):
            raise ValueError("traces have different layouts")
        return Trace(
            layout,
            np.vstack([t.values for t in traces]),
            np.concatenate([t.deviance for t in traces]),
            chain_id=-1,
            seed=traces[0].seed,
            meta=dict(traces[0].meta),
        )

    # serialization -------------------------------------------------------------
    def to_csv(self, path) -> None:
        path = Path(path)
        header = ",".join(self.names + ["deviance"])
        body = np.column_stack([self.values, self.deviance])
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            fh.write(header + "\n")
            np.savetxt(fh, body, delimiter=",", fmt="%.17g")
        os.replace(tmp, path)
        sidecar = {
            "chain_id": self.chain_id,
            "seed": self.seed,
            "layout": [[b, list(s)] for b, s in self.layout],
            "acceptance": self.acceptance,
            "meta": self.meta,
        }
        _atomic_write_text(path.with_suffix(".json"), json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path) -> "Trace":
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        trace = cls(
            [(b, tuple(s)) for b, s in side["layout"]],
            body[:, :-1],
            body[:, -1],
            acceptance=side.get("acceptance", {}),
            chain_id=side.get("chain_id", 0),
            seed=side.get("seed", 0),
            meta=side.get("meta", {}),
        )
        if header != trace.names + ["deviance"]:
            raise ValueError(f"{path}: header does not match the recorded layout")
        return trace


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------- conjugate pieces


def metropolis_accept(log_ratio, rng: np.random.Generator):
    """Accept with probability ``min(1, exp(log_ratio))`` (elementwise)."""
    if np.ndim(log_ratio) == 0:
        r = float(log_ratio)
        u = rng.random()
        return r == r and (r >= 0.0 or np.log(u) < r)
    log_ratio = np.asarray(log_ratio, dtype=float)
    u = rng.random(log_ratio.shape)
    with np.errstate(divide="ignore"):
        return np.log(u) < np.nan_to_num(log_ratio, nan=-np.inf)


def sample_sigma_conditional(effects, lambdas, psi, c, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Sigma | rest ~ IW(psi + sum_i lambda_i e_i e_i', c + m)``.

    ``effects`` / ``lambdas`` may be lists to pool several sets of effects
    sharing one scale matrix.
    """
    if not isinstance(effects, (list, tuple)):
        effects, lambdas = [effects], [lambdas]
    scale = np.array(psi, dtype=float, copy=True)
    dof = float(c)
    for e, lam in zip(effects, lambdas):
        e = np.asarray(e, dtype=float)
        scale += (e * np.asarray(lam, dtype=float)[:, None]).T @ e
        dof += e.shape[0]
    return inv_wishart_sample(InvWishart(0.5 * (scale + scale.T), dof), rng)


def _mahalanobis(effects, Sigma) -> np.ndarray:
    chol = np.linalg.cholesky(Sigma)
    dev = np.linalg.solve(chol, effects.T)
    return np.sum(dev**2, axis=0)


def sample_lambda_conditional(effects, Sigma, nu, rng: np.random.Generator) -> np.ndarray:
    """Draw ``lambda_i ~ Gamma((nu + q) / 2, (nu + e_i' Sigma^{-1} e_i) / 2)``."""
    effects = np.asarray(effects, dtype=float)
    q = effects.shape[1]
    maha = _mahalanobis(effects, Sigma)
    return rng.gamma(0.5 * (nu + q), 2.0 / (nu + maha))


def nu_log_conditional(nu, lambdas, catalog: PriorCatalog) -> float:
    """Log density of ``nu`` given the mixing scalars, up to a constant."""
    lp = catalog.nu_log_prior(nu)
    if not np.isfinite(lp):
        return -np.inf
    lam = np.asarray(lambdas, dtype=float)
    h = 0.5 * nu
    return lp + float(np.sum(h * np.log(h) - gammaln(h) + (h - 1.0) * np.log(lam) - h * lam))


class _FixedEffectPrior:
    """Log prior of a fixed-effect vector, up to a constant."""

    def __init__(self, catalog: PriorCatalog, which: str, dim: int):
        fam, dof, mean, scale = catalog.fixed_effect_law(which, dim)
        self.t = fam == "t"
        self.dof = dof
        self.mean = mean
        self.prec = np.linalg.inv(scale)
        self.dim = dim

    def __call__(self, x) -> float:
        dev = x - self.mean
        maha = float(dev @ self.prec @ dev)
        if self.t:
            return -0.5 * (self.dof + self.dim) * np.log1p(maha / self.dof)
        return -0.5 * maha


# ---------------------------------------------------------------- initialisation


def _logit(y):
    return np.log(y) - np.log1p(-y)


def initial_state(spec: ModelSpec, catalog: PriorCatalog, data: GroupedDataset) -> ParamState:
    """Cheap starting point inside the support.

    ``beta`` by least squares on ``logit(y)``, random effects at zero, scale
    matrices at their prior means, ``nu = 10``, ``phi`` by moments of the
    residuals, ``delta`` by least squares against that constant ``log(phi)``.
    """
    spec.check_data(data)
    m = data.m
    state = ParamState.zeros(spec, m)
    if spec.p:
        state.beta = np.linalg.lstsq(data.X, _logit(data.y), rcond=None)[0]
    mu = expit(data.X @ state.beta)
    var = np.mean((data.y - mu) ** 2)
    phi0 = float(np.clip(np.mean(mu * (1 - mu)) / max(var, 1e-12) - 1.0, 1.0, 1e4))
    if spec.q:
        state.Sigma_b = _prior_mean(catalog.sigma_law("b", spec.q))
    if not spec.model2:
        lo, hi = phi_prior_support(catalog.phi_prior)
        if np.isfinite(hi):
            phi0 = min(phi0, 0.5 * hi)
        state.phi = phi0
        return state
    if spec.p_star:
        state.delta = np.linalg.lstsq(data.W, np.full(data.n_obs, np.log(phi0)), rcond=None)[0]
    if spec.q_star and not spec.tie_random_effects:
        state.Sigma_d = _prior_mean(catalog.sigma_law("d", spec.d_dim))
    return state


def _prior_mean(law: InvWishart) -> np.ndarray:
    q = law.dim
    return law.scale / max(law.dof - q - 1.0, 1.0)


# ---------------------------------------------------------------- adaptive proposals


class _RandomWalk:
    """Gaussian random-walk proposals for ``k`` independent blocks of size ``dim``."""

    def __init__(self, cov: np.ndarray, target: float, step: float = 1.0):
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 2:
            cov = cov[None]
        self.k, self.dim = cov.shape[0], cov.shape[1]
        self.target = target
        with np.errstate(divide="ignore"):
            # a zero step gives log_scale = -inf: every proposal equals the current point
            self.log_scale = np.full(self.k, np.log(step * 2.38 / np.sqrt(max(self.dim, 1))))
        self.set_cov(cov)
        self.accepted = np.zeros(self.k)
        self.tried = 0

    def set_cov(self, cov: np.ndarray) -> None:
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 2:
            cov = cov[None]
        cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
        diag = np.diagonal(cov, axis1=-2, axis2=-1)
        ridge = 1e-6 * diag + 1e-12
        cov = cov + ridge[..., None] * np.eye(self.dim)
        self.chol = np.linalg.cholesky(cov)

    def propose(self, current: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((self.k, self.dim))
        step = np.einsum("kij,kj->ki", self.chol, z) * np.exp(self.log_scale)[:, None]
        return current + step.reshape(current.shape)

    def adapt(self, accepted, t: int) -> None:
        gain = min(0.5, 2.0 / (t + 1) ** 0.6)
        self.log_scale += gain * (np.asarray(accepted, dtype=float) - self.target)

    def record(self, accepted) -> None:
        self.accepted += accepted
        self.tried += 1

    def rate(self) -> float:
        return float(np.mean(self.accepted) / self.tried) if self.tried else float("nan")


def _empirical_cov(buffer: np.ndarray) -> np.ndarray | None:
    """Covariance per block from a ``(window, k, dim)`` buffer, or ``None`` if degenerate."""
    centered = buffer - buffer.mean(axis=0)
    n = buffer.shape[0]
    cov = np.einsum("wki,wkj->kij", centered, centered) / max(n - 1, 1)
    if not np.all(np.isfinite(cov)):
        return None
    diag = np.diagonal(cov, axis1=-2, axis2=-1)
    if np.any(diag <= 0):
        return None
    return cov


# ---------------------------------------------------------------- the sampler


class GibbsSampler:
    """One chain.  Holds the current state, cached predictors and proposals."""

    def __init__(
        self,
        spec: ModelSpec,
        catalog: PriorCatalog,
        data: GroupedDataset,
        config: SamplerConfig,
        chain_index: int = 0,
        init: ParamState | None = None,
    ):
        spec.check_data(data)
        self.spec, self.catalog, self.data, self.config = spec, catalog, data, config
        self.chain_index = chain_index
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(chain_index,)))
        self.fixed = set(config.fixed)
        self.state = init.copy() if init is not None else initial_state(spec, catalog, data)
        self._check_shapes()
        self.beta_prior = _FixedEffectPrior(catalog, "beta", spec.p)
        self.delta_prior = _FixedEffectPrior(catalog, "delta", spec.p_star) if spec.p_star else None
        self.psi_b = catalog.sigma_law("b", spec.q).scale if spec.q else None
        self.c_b = catalog.sigma_law("b", spec.q).dof if spec.q else None
        if spec.model2 and spec.q_star and not spec.tie_random_effects:
            law = catalog.sigma_law("d", spec.d_dim)
            self.psi_d, self.c_d = law.scale, law.dof
        self.H_pad = data.H
        if spec.model2 and spec.tie_random_effects and spec.d_dim > spec.q_star:
            self.H_pad = np.hstack([data.H, np.zeros((data.n_obs, spec.d_dim - spec.q_star))])
        self._refresh_cache()
        self._build_proposals()
        self._build_shifts()
        if chain_index > 0 and config.jitter:
            self._jitter()
            self._refresh_cache()
        self._check_start()
        self.t = 0

    # -- cache -------------------------------------------------------------------
    def _check_shapes(self):
        s, st, m = self.spec, self.state, self.data.m
        expect = {"beta": (s.p,), "b": (m, s.q)}
        if s.model2:
            expect.update(delta=(s.p_star,), d=(m, s.d_dim))
        for k, shape in expect.items():
            if np.shape(getattr(st, k)) != shape:
                raise SamplerError(f"initial {k} has shape {np.shape(getattr(st, k))}, expected {shape}")

    def _refresh_cache(self):
        st, data = self.state, self.data
        self.xb = data.X @ st.beta
        self.zb = np.einsum("nk,nk->n", data.Z, st.b[data.group]) if self.spec.q else np.zeros(data.n_obs)
        if self.spec.model2:
            self.wd = data.W @ st.delta
            self.hd = (
                np.einsum("nk,nk->n", self.H_pad, st.d[data.group]) if self.spec.q_star else np.zeros(data.n_obs)
            )
            tau = self.wd + self.hd
            self.phi_obs = np.exp(np.minimum(tau, TAU_MAX))
            self._tau_ok = bool(np.all(tau <= TAU_MAX))
        else:
            self.phi_obs = st.phi
            self._tau_ok = True
        self.ll = self._terms(self.xb + self.zb, self.phi_obs)

    def _terms(self, eta, phi):
        if not self.config.use_likelihood:
            return np.zeros(self.data.n_obs)
        return beta_loglik_terms(self.data.log_y, self.data.log1m_y, expit(eta), phi)

    def log_posterior(self) -> float:
        """Log posterior in the augmented parameterisation, up to a constant."""
        from .priors import log_prior

        ll = float(np.sum(self.ll)) if self._tau_ok else -np.inf
        return ll + log_prior(self.catalog, self.spec, self.state, augmented=True)

    def _check_start(self):
        from .priors import log_prior_blocks

        if not self._tau_ok:
            raise SamplerError("initial state: precision block gives log(phi) > 700")
        if not np.all(np.isfinite(self.ll)):
            raise SamplerError("initial state: non-finite log-likelihood (location or precision block)")
        blocks = log_prior_blocks(self.catalog, self.spec, self.state, augmented=True)
        for name, val in blocks.items():
            if not np.isfinite(val):
                raise SamplerError(f"initial state: non-finite log prior in block {name!r}")

    # -- proposals ---------------------------------------------------------------
    def _weights(self):
        """Expected information for the location and log-precision predictors."""
        mu = np.clip(expit(self.xb + self.zb), 1e-6, 1 - 1e-6)
        phi = np.broadcast_to(np.asarray(self.phi_obs, dtype=float), mu.shape)
        a, b = mu * phi, (1 - mu) * phi
        ta, tb = polygamma(1, a), polygamma(1, b)
        w_eta = phi**2 * (ta + tb) * (mu * (1 - mu)) ** 2
        w_tau = phi**2 * (mu**2 * ta + (1 - mu) ** 2 * tb - polygamma(1, phi))
        if not self.config.use_likelihood:
            w_eta, w_tau = np.zeros_like(mu), np.zeros_like(mu)
        return w_eta, np.maximum(w_tau, 0.0)

    def _step(self, block: str) -> float:
        return float(self.config.initial_step_sizes.get(block, 1.0))

    def _information_covs(self) -> dict:
        """Inverse conditional expected information of each vector block at the current state."""
        spec, data, st = self.spec, self.data, self.state
        w_eta, w_tau = self._weights()
        out = {}
        if spec.p:
            prec = data.X.T @ (w_eta[:, None] * data.X) + _prior_precision(self.catalog, "beta", spec.p)
            out["beta"] = np.linalg.inv(prec)
        if spec.q:
            out["b"] = self._group_covs(data.Z, w_eta, st.Sigma_b, st.lambda_b)
        if not spec.model2:
            out["phi"] = np.eye(1) / (float(np.sum(w_tau)) + 1e-2)
            return out
        if spec.p_star:
            prec = data.W.T @ (w_tau[:, None] * data.W) + _prior_precision(self.catalog, "delta", spec.p_star)
            out["delta"] = np.linalg.inv(prec)
        if spec.q_star:
            Sigma = st.Sigma_b if spec.tie_random_effects else st.Sigma_d
            out["d"] = self._group_covs(self.H_pad, w_tau, Sigma, st.lambda_d)
        return out

    def _build_proposals(self):
        spec, cfg = self.spec, self.config
        tv, ts = cfg.target_accept_vector, cfg.target_accept_scalar
        target = lambda dim: tv if dim > 1 else ts
        self.props = {}
        self._buffers = {}
        dims = {"beta": spec.p, "b": spec.q, "delta": spec.p_star, "d": spec.d_dim if spec.model2 else 0, "phi": 1}
        for block, cov in self._information_covs().items():
            self.props[block] = _RandomWalk(cov, target(dims[block]), self._step(block))
        if spec.q and spec.re_law_b == "t":
            self.props["nu_b"] = _RandomWalk(np.eye(1) * 0.25, ts, self._step("nu_b"))
        if spec.model2 and spec.q_star and not spec.tie_random_effects and spec.re_law_d == "t":
            self.props["nu_d"] = _RandomWalk(np.eye(1) * 0.25, ts, self._step("nu_d"))

    def _refresh_information(self):
        for block, cov in self._information_covs().items():
            if block in self.props and block != "phi":
                self.props[block].set_cov(cov)

    def _build_shifts(self):
        """Set up the intercept shift moves.

        When both the fixed and the random design of a submodel hold a column
        of ones, the direction ``(intercept + s, every effect - s)`` leaves all
        linear predictors unchanged.  A scalar Metropolis step along it only
        involves prior terms and removes the slow drift between a fixed
        intercept and the mean of the random intercepts.
        """
        spec, data = self.spec, self.data
        self.shifts = {}
        pairs = [("b", "beta", data.X, data.Z)]
        if spec.model2:
            pairs.append(("d", "delta", data.W, self.H_pad))
        for eff, fixed, Xd, Zd in pairs:
            if eff in self.fixed or fixed in self.fixed or Zd.shape[1] == 0 or Xd.shape[1] == 0:
                continue
            jx = _ones_column(Xd)
            kz = _ones_column(Zd)
            if jx is None or kz is None:
                continue
            Sigma = self.state.Sigma_b if (eff == "b" or spec.tie_random_effects) else self.state.Sigma_d
            sd = np.sqrt(Sigma[kz, kz] / self.data.m)
            self.shifts[eff] = (fixed, jx, kz)
            self.props["shift_" + eff] = _RandomWalk(np.eye(1) * sd**2, self.config.target_accept_scalar, self._step("shift_" + eff))

    def _group_covs(self, design, weights, Sigma, lam):
        k = design.shape[1]
        info = np.zeros((self.data.m, k, k))
        np.add.at(info, self.data.group, weights[:, None, None] * design[:, :, None] * design[:, None, :])
        return np.linalg.inv(info + np.asarray(lam)[:, None, None] * np.linalg.inv(Sigma))

    def _jitter(self):
        """Over-disperse the start of chains other than the first."""
        rng, st = self.rng, self.state
        if "beta" not in self.fixed and self.spec.p:
            cov = _cov_from(self.props["beta"])
            st.beta = st.beta + 2.0 * rng.multivariate_normal(np.zeros(self.spec.p), cov)
        if "phi" not in self.fixed and not self.spec.model2:
            lo, hi = phi_prior_support(self.catalog.phi_prior)
            sd = float(np.sqrt(_cov_from(self.props["phi"])[0, 0]))
            st.phi = float(min(st.phi * np.exp(2.0 * sd * rng.standard_normal()), 0.9 * hi))
        if "delta" not in self.fixed and self.spec.p_star:
            cov = _cov_from(self.props["delta"])
            st.delta = st.delta + 2.0 * rng.multivariate_normal(np.zeros(self.spec.p_star), cov)
        if self.spec.q:
            if "Sigma_b" not in self.fixed:
                st.Sigma_b = st.Sigma_b * np.exp(0.5 * rng.standard_normal())
            if "nu_b" not in self.fixed and self.spec.re_law_b == "t":
                lower = 2.0 if self.catalog.nu_truncate else 0.0
                st.nu_b = max(st.nu_b * np.exp(0.5 * rng.standard_normal()), lower + 0.5)
        if self.spec.model2 and self.spec.q_star and not self.spec.tie_random_effects:
            if "Sigma_d" not in self.fixed:
                st.Sigma_d = st.Sigma_d * np.exp(0.5 * rng.standard_normal())
            if "nu_d" not in self.fixed and self.spec.re_law_d == "t":
                st.nu_d = max(st.nu_d * np.exp(0.5 * rng.standard_normal()), 2.5)

    # -- adaptation ----------------------------------------------------------------
    @property
    def adapting(self) -> bool:
        return self.t < self.config.burn_in

    def _after_step(self, block: str, accepted, value=None):
        prop = self.props[block]
        if self.adapting:
            prop.adapt(accepted, self.t)
            empirical = self.config.proposal_covariance == "empirical"
            if empirical and value is not None and block in ("beta", "delta", "b", "d"):
                self._push(block, value)
        else:
            prop.record(accepted)

    def _push(self, block: str, value):
        w = self.config.adapt_window
        buf = self._buffers.get(block) if hasattr(self, "_buffers") else None
        if not hasattr(self, "_buffers"):
            self._buffers = {}
        if buf is None:
            arr = np.asarray(value, dtype=float).reshape(self.props[block].k, self.props[block].dim)
            buf = self._buffers[block] = [np.empty((w,) + arr.shape), 0]
        buf[0][buf[1] % w] = np.asarray(value).reshape(buf[0].shape[1:])
        buf[1] += 1
        if buf[1] % w == 0:
            cov = _empirical_cov(buf[0])
            if cov is not None:
                self.props[block].set_cov(cov)

    # -- block updates -------------------------------------------------------------
    def update_beta(self):
        st, prop = self.state, self.props["beta"]
        cand = prop.propose(st.beta, self.rng)
        xb = self.data.X @ cand
        ll = self._terms(xb + self.zb, self.phi_obs)
        ratio = np.sum(ll) - np.sum(self.ll) + self.beta_prior(cand) - self.beta_prior(st.beta)
        acc = bool(metropolis_accept(ratio, self.rng))
        if acc:
            st.beta, self.xb, self.ll = cand, xb, ll
        self._after_step("beta", acc, st.beta)
        return acc

    def _update_effects(self, which: str):
        """Joint proposal for all groups, accepted group by group."""
        spec, data, st = self.spec, self.data, self.state
        if which == "b":
            design, cur, lam = data.Z, st.b, st.lambda_b
            Sigma = st.Sigma_b
        else:
            design, cur, lam = self.H_pad, st.d, st.lambda_d
            Sigma = st.Sigma_b if spec.tie_random_effects else st.Sigma_d
        prop = self.props[which]
        cand = prop.propose(cur, self.rng)
        contrib = np.einsum("nk,nk->n", design, cand[data.group])
        if which == "b":
            ll = self._terms(self.xb + contrib, self.phi_obs)
        else:
            tau = self.wd + contrib
            ok_rows = tau <= TAU_MAX
            ll = self._terms(self.xb + self.zb, np.exp(np.minimum(tau, TAU_MAX)))
            ll = np.where(ok_rows, ll, -np.inf)
        dll = np.bincount(data.group, weights=ll - self.ll, minlength=data.m)
        if not self.config.use_likelihood:
            dll = np.zeros(data.m)
        prec = np.linalg.inv(Sigma)
        quad = lambda e: np.einsum("mi,ij,mj->m", e, prec, e)
        ratio = dll - 0.5 * lam * (quad(cand) - quad(cur))
        acc = metropolis_accept(ratio, self.rng)
        if np.any(acc):
            new = np.where(acc[:, None], cand, cur)
            rows = acc[data.group]
            if which == "b":
                st.b = new
                self.zb = np.where(rows, contrib, self.zb)
            else:
                st.d = new
                self.hd = np.where(rows, contrib, self.hd)
                self.phi_obs = np.exp(self.wd + self.hd)
            self.ll = np.where(rows, ll, self.ll)
        self._after_step(which, acc, getattr(st, which))
        return acc

    def update_shift(self, which: str = "b"):
        """Move a fixed intercept and all random intercepts in opposite directions."""
        spec, st = self.spec, self.state
        fixed, jx, kz = self.shifts[which]
        step = float(self.props["shift_" + which].propose(np.zeros(1), self.rng)[0])
        effects = getattr(st, which)
        coef = getattr(st, fixed)
        cand_e = effects.copy()
        cand_e[:, kz] -= step
        cand_c = coef.copy()
        cand_c[jx] += step
        if which == "b":
            Sigma, lam, prior = st.Sigma_b, st.lambda_b, self.beta_prior
        else:
            Sigma = st.Sigma_b if spec.tie_random_effects else st.Sigma_d
            lam, prior = st.lambda_d, self.delta_prior
        prec = np.linalg.inv(Sigma)
        quad = lambda e: np.einsum("mi,ij,mj->m", e, prec, e)
        ratio = prior(cand_c) - prior(coef) - 0.5 * float(np.sum(lam * (quad(cand_e) - quad(effects))))
        acc = bool(metropolis_accept(ratio, self.rng))
        if acc:
            setattr(st, which, cand_e)
            setattr(st, fixed, cand_c)
            # the sum is unchanged but the two cached parts move
            if which == "b":
                self.xb = self.xb + step
                self.zb = self.zb - step
            else:
                self.wd = self.wd + step
                self.hd = self.hd - step
        self._after_step("shift_" + which, acc)
        return acc

    def update_random_effects(self):
        return self._update_effects("b")

    def update_random_effect(self, i: int):
        """Metropolis step for one group's ``b_i`` only."""
        data, st = self.data, self.state
        rows = data.group == i
        prop = self.props["b"]
        z = self.rng.standard_normal(prop.dim)
        cand = st.b[i] + np.exp(prop.log_scale[i]) * prop.chol[i] @ z
        contrib = data.Z[rows] @ cand
        if self.config.use_likelihood:
            mu = expit(self.xb[rows] + contrib)
            ll = beta_loglik_terms(data.log_y[rows], data.log1m_y[rows], mu, _rows_of(self.phi_obs, rows))
        else:
            ll = np.zeros(int(rows.sum()))
        prec = np.linalg.inv(st.Sigma_b)
        ratio = np.sum(ll) - np.sum(self.ll[rows])
        if not self.config.use_likelihood:
            ratio = 0.0
        ratio -= 0.5 * st.lambda_b[i] * (cand @ prec @ cand - st.b[i] @ prec @ st.b[i])
        acc = bool(metropolis_accept(ratio, self.rng))
        if acc:
            st.b[i] = cand
            self.zb[rows] = contrib
            self.ll[rows] = ll
        return acc

    def update_sigma(self, which: str = "b"):
        spec, st = self.spec, self.state
        if which == "b":
            effects, lams = [st.b], [st.lambda_b]
            if spec.model2 and spec.tie_random_effects:
                effects.append(st.d)
                lams.append(st.lambda_d)
            st.Sigma_b = sample_sigma_conditional(effects, lams, self.psi_b, self.c_b, self.rng)
        else:
            st.Sigma_d = sample_sigma_conditional(st.d, st.lambda_d, self.psi_d, self.c_d, self.rng)

    def update_lambda(self, which: str = "b"):
        spec, st = self.spec, self.state
        if which == "b":
            st.lambda_b = sample_lambda_conditional(st.b, st.Sigma_b, st.nu_b, self.rng)
        else:
            Sigma, nu = (st.Sigma_b, st.nu_b) if spec.tie_random_effects else (st.Sigma_d, st.nu_d)
            st.lambda_d = sample_lambda_conditional(st.d, Sigma, nu, self.rng)

    def update_nu(self, which: str = "b"):
        spec, st = self.spec, self.state
        if which == "b":
            lams = st.lambda_b
            if spec.model2 and spec.tie_random_effects:
                lams = np.concatenate([st.lambda_b, st.lambda_d])
            cur = st.nu_b
        else:
            lams, cur = st.lambda_d, st.nu_d
        key = "nu_" + which
        prop = self.props[key]
        log_cand = prop.propose(np.array([np.log(cur)]), self.rng)[0]
        cand = float(np.exp(log_cand))
        ratio = (
            nu_log_conditional(cand, lams, self.catalog)
            - nu_log_conditional(cur, lams, self.catalog)
            + log_cand
            - np.log(cur)
        )
        acc = bool(metropolis_accept(ratio, self.rng))
        if acc:
            setattr(st, key, cand)
        self._after_step(key, acc)
        return acc

    def update_phi(self):
        st, prop = self.state, self.props["phi"]
        log_cand = prop.propose(np.array([np.log(st.phi)]), self.rng)[0]
        cand = float(np.exp(log_cand))
        prior_c = phi_log_prior(self.catalog.phi_prior, cand)
        acc = False
        if np.isfinite(prior_c):
            ll = self._terms(self.xb + self.zb, cand)
            ratio = (
                np.sum(ll)
                - np.sum(self.ll)
                + prior_c
                - phi_log_prior(self.catalog.phi_prior, st.phi)
                + log_cand
                - np.log(st.phi)
            )
            acc = bool(metropolis_accept(ratio, self.rng))
            if acc:
                st.phi, self.phi_obs, self.ll = cand, cand, ll
        self._after_step("phi", acc)
        return acc

    def update_delta(self):
        st, prop = self.state, self.props["delta"]
        cand = prop.propose(st.delta, self.rng)
        wd = self.data.W @ cand
        tau = wd + self.hd
        acc = False
        if np.all(tau <= TAU_MAX):
            phi = np.exp(tau)
            ll = self._terms(self.xb + self.zb, phi)
            ratio = np.sum(ll) - np.sum(self.ll) + self.delta_prior(cand) - self.delta_prior(st.delta)
            acc = bool(metropolis_accept(ratio, self.rng))
            if acc:
                st.delta, self.wd, self.phi_obs, self.ll = cand, wd, phi, ll
        self._after_step("delta", acc, st.delta)
        return acc

    # -- sweep -------------------------------------------------------------------
    def sweep(self):
        spec, fx = self.spec, self.fixed
        if spec.p and "beta" not in fx:
            self.update_beta()
        if spec.q:
            if "b" not in fx:
                self._update_effects("b")
                if "b" in self.shifts:
                    self.update_shift("b")
            if "Sigma_b" not in fx:
                self.update_sigma("b")
            if spec.re_law_b == "t":
                if "lambda_b" not in fx:
                    self.update_lambda("b")
                if "nu_b" not in fx:
                    self.update_nu("b")
        if not spec.model2:
            if "phi" not in fx:
                self.update_phi()
        else:
            if spec.p_star and "delta" not in fx:
                self.update_delta()
            if spec.q_star:
                if "d" not in fx:
                    self._update_effects("d")
                    if "d" in self.shifts:
                        self.update_shift("d")
                tied = spec.tie_random_effects
                if not tied and "Sigma_d" not in fx:
                    self.update_sigma("d")
                if spec.law_d == "t" and "lambda_d" not in fx:
                    self.update_lambda("d")
                if not tied and spec.re_law_d == "t" and "nu_d" not in fx:
                    self.update_nu("d")
        self.t += 1
        window = self.config.adapt_window
        if self.config.proposal_covariance == "information" and self.t < self.config.burn_in and self.t % window == 0:
            self._refresh_information()

    def flat_state(self) -> np.ndarray:
        layout = param_layout(self.spec, self.data.m)
        return np.concatenate([_flatten_block(b, getattr(self.state, b)) for b, _ in layout])

    def run(self) -> Trace:
        cfg = self.config
        layout = param_layout(self.spec, self.data.m)
        n_keep = cfg.n_retained
        first = self.flat_state()
        values = np.empty((n_keep, first.size))
        deviance = np.empty(n_keep)
        k = 0
        for it in range(1, cfg.n_iterations + 1):
            self.sweep()
            if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
                values[k] = self.flat_state()
                if cfg.use_likelihood:
                    deviance[k] = -2.0 * float(np.sum(self.ll))
                else:
                    deviance[k] = np.nan
                k += 1
        if cfg.use_likelihood and not np.all(np.isfinite(deviance)):
            raise SamplerError(f"chain {self.chain_index}: non-finite deviance in retained draws")
        acceptance = {name: p.rate() for name, p in self.props.items()}
        return Trace(
            layout,
            values,
            deviance,
            acceptance=acceptance,
            chain_id=self.chain_index,
            seed=cfg.seed,
            meta={"m": self.data.m, "n_obs": self.data.n_obs, "spec": asdict(self.spec)},
        )


def _ones_column(design: np.ndarray) -> int | None:
    hits = np.flatnonzero(np.all(design == 1.0, axis=0))
    return int(hits[0]) if hits.size else None


def _rows_of(phi, rows):
    return phi[rows] if np.ndim(phi) else phi


def _cov_from(prop: _RandomWalk) -> np.ndarray:
    c = prop.chol[0]
    return c @ c.T


def _prior_precision(catalog: PriorCatalog, which: str, dim: int) -> np.ndarray:
    _, _, _, scale = catalog.fixed_effect_law(which, dim)
    return np.linalg.inv(scale)


# ---------------------------------------------------------------- drivers


def run_chain(
    spec: ModelSpec,
    catalog: PriorCatalog,
    data: GroupedDataset,
    config: SamplerConfig,
    chain_index: int = 0,
    init: ParamState | None = None,
) -> Trace:
    """Run one chain; its random stream depends only on ``(config.seed, chain_index)``."""
    return GibbsSampler(spec, catalog, data, config, chain_index, init).run()


def _run_chain_job(args):
    spec, catalog, data, config, k, init = args
    try:
        return run_chain(spec, catalog, data, config, k, init)
    except (SamplerError, DomainError, np.linalg.LinAlgError) as exc:
        raise SamplerError(f"chain {k}: {exc}") from exc


def run_ensemble(
    spec: ModelSpec,
    catalog: PriorCatalog,
    data: GroupedDataset,
    config: SamplerConfig,
    init: ParamState | None = None,
) -> list[Trace]:
    """Run ``config.n_chains`` independent chains (in processes if ``n_jobs > 1``)."""
    jobs = [(spec, catalog, data, config, k, init) for k in range(config.n_chains)]
    if config.n_jobs > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.n_jobs, config.n_chains)) as pool:
            return list(pool.map(_run_chain_job, jobs))
    return [_run_chain_job(j) for j in jobs]


def check_deviance(trace: Trace, spec: ModelSpec, data: GroupedDataset, k: int = 0) -> float:
    """Absolute gap between a stored deviance and a fresh evaluation."""
    return abs(trace.deviance[k] + 2.0 * log_likelihood(spec, trace.state(k), data))
