"""Data containers, link functions and the likelihood of the mixed beta model.

The location submodel is ``logit(mu_ij) = x_ij' beta + z_ij' b_i``.  Precision
is either one common ``phi`` (Model 1) or ``log(phi_ij) = w_ij' delta +
h_ij' d_i`` (Model 2).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln

logger = logging.getLogger(__name__)

MU_FLOOR = 1e-12
TAU_MAX = 700.0

__all__ = [
    "DomainError",
    "Group",
    "GroupedDataset",
    "ModelSpec",
    "ParamState",
    "linear_predictor_location",
    "linear_predictor_precision",
    "mean_response",
    "precision_response",
    "log_likelihood",
    "log_likelihood_terms",
    "clamp_events",
]


class DomainError(ValueError):
    """A value falls outside the support required by the model."""


_clamp_counter = [0]


def clamp_events() -> int:
    """Number of times a mean was floored into [1e-12, 1 - 1e-12] so far."""
    return _clamp_counter[0]


# ---------------------------------------------------------------- data


@dataclass(frozen=True)
class Group:
    unit_id: object
    responses: np.ndarray
    X_rows: np.ndarray
    Z_rows: np.ndarray
    W_rows: np.ndarray
    H_rows: np.ndarray


@dataclass(eq=False)
class GroupedDataset:
    """Responses and design matrices stacked by observation.

    ``group`` maps each observation to its group index ``0..m-1``; rows of a
    group are contiguous and groups appear in first-appearance order.
    """

    y: np.ndarray
    X: np.ndarray
    group: np.ndarray
    unit_ids: list
    Z: np.ndarray | None = None
    W: np.ndarray | None = None
    H: np.ndarray | None = None
    x_names: list[str] | None = None
    z_names: list[str] | None = None
    w_names: list[str] | None = None
    h_names: list[str] | None = None
    log_y: np.ndarray = field(init=False, repr=False)
    log1m_y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        n = self.y.shape[0]
        self.X = _as_design(self.X, n, "X")
        self.Z = _as_design(self.Z, n, "Z")
        self.W = _as_design(self.W, n, "W")
        self.H = _as_design(self.H, n, "H")
        self.group = np.asarray(self.group, dtype=np.intp)
        if self.group.shape != (n,):
            raise ValueError("group index must have one entry per response")
        bad = np.flatnonzero(~((self.y > 0.0) & (self.y < 1.0)))
        if bad.size:
            raise DomainError(
                f"response at row {bad[0] + 1} is {self.y[bad[0]]!r}; responses must lie in (0, 1)"
            )
        m = len(self.unit_ids)
        if m < 1:
            raise ValueError("dataset needs at least one group")
        if n and (self.group.min() < 0 or self.group.max() >= m):
            raise ValueError("group index out of range")
        counts = np.bincount(self.group, minlength=m)
        if np.any(counts == 0):
            raise ValueError("every group needs at least one response")
        if np.any(np.diff(self.group) < 0):
            raise ValueError("rows must be sorted by group")
        self.log_y = np.log(self.y)
        self.log1m_y = np.log1p(-self.y)
        for attr, mat in (("x_names", self.X), ("z_names", self.Z), ("w_names", self.W), ("h_names", self.H)):
            if getattr(self, attr) is None:
                setattr(self, attr, [f"{attr[0]}{k + 1}" for k in range(mat.shape[1])])

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def m(self) -> int:
        return len(self.unit_ids)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.group, minlength=self.m)

    @property
    def groups(self) -> list[Group]:
        out = []
        starts = np.concatenate([[0], np.cumsum(self.sizes)])
        for i, uid in enumerate(self.unit_ids):
            s = slice(starts[i], starts[i + 1])
            out.append(Group(uid, self.y[s], self.X[s], self.Z[s], self.W[s], self.H[s]))
        return out

    @classmethod
    def from_groups(cls, groups: Sequence[Group], **names) -> "GroupedDataset":
        cat = lambda attr: np.vstack([np.atleast_2d(getattr(g, attr)) for g in groups])
        idx = np.concatenate([np.full(len(g.responses), i) for i, g in enumerate(groups)])
        return cls(
            y=np.concatenate([g.responses for g in groups]),
            X=cat("X_rows"),
            Z=cat("Z_rows"),
            W=cat("W_rows"),
            H=cat("H_rows"),
            group=idx,
            unit_ids=[g.unit_id for g in groups],
            **names,
        )

    def subset(self, keep: Sequence[int]) -> "GroupedDataset":
        """Dataset restricted to the listed groups, in the listed order."""
        groups = self.groups
        return GroupedDataset.from_groups(
            [groups[i] for i in keep],
            x_names=self.x_names,
            z_names=self.z_names,
            w_names=self.w_names,
            h_names=self.h_names,
        )


def _as_design(mat, n: int, name: str) -> np.ndarray:
    if mat is None:
        return np.zeros((n, 0))
    mat = np.asarray(mat, dtype=float)
    if mat.ndim == 1:
        mat = mat[:, None]
    if mat.shape[0] != n:
        raise ValueError(f"{name} has {mat.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} contains non-finite values")
    return mat


# ---------------------------------------------------------------- model structure


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions and random-effect laws of a mixed beta regression.

    ``precision`` is ``"constant"`` (Model 1) or ``"regression"`` (Model 2).
    ``re_law_b`` / ``re_law_d`` are ``"normal"`` or ``"t"``.  With
    ``tie_random_effects`` the precision random effects share the scale matrix
    and degrees of freedom of the location ones; ``d_i`` then lives in
    dimension ``q`` and only its first ``q_star`` coordinates enter the
    precision predictor.
    """

    p: int
    q: int = 0
    precision: str = "constant"
    p_star: int = 0
    q_star: int = 0
    re_law_b: str = "t"
    re_law_d: str = "t"
    tie_random_effects: bool = False

    def __post_init__(self):
        if self.p < 0 or self.q < 0 or self.p_star < 0 or self.q_star < 0:
            raise ValueError("dimensions must be non-negative")
        if self.precision not in ("constant", "regression"):
            raise ValueError(f"unknown precision variant {self.precision!r}")
        if self.precision == "regression" and self.p_star + self.q_star < 1:
            raise ValueError("regression precision needs p* + q* >= 1")
        if self.precision == "constant" and (self.p_star or self.q_star):
            raise ValueError("constant precision takes no precision design")
        for law in (self.re_law_b, self.re_law_d):
            if law not in ("normal", "t"):
                raise ValueError(f"unknown random-effect law {law!r}")
        if self.tie_random_effects:
            if self.q_star == 0 or self.q == 0:
                raise ValueError("tying needs random effects in both submodels")
            if self.q_star > self.q:
                raise ValueError("tied precision random effects need q* <= q")

    @property
    def model2(self) -> bool:
        return self.precision == "regression"

    @property
    def d_dim(self) -> int:
        """Dimension of each stored ``d_i``."""
        return self.q if self.tie_random_effects else self.q_star

    @property
    def law_d(self) -> str:
        return self.re_law_b if self.tie_random_effects else self.re_law_d

    def check_data(self, data: GroupedDataset) -> None:
        widths = (data.X.shape[1], data.Z.shape[1], data.W.shape[1], data.H.shape[1])
        want = (self.p, self.q, self.p_star, self.q_star)
        if widths != want:
            raise ValueError(f"design widths (p, q, p*, q*) = {widths} but spec says {want}")


@dataclass(eq=False)
class ParamState:
    """One point in parameter space.

    Inactive blocks are empty arrays (``q = 0`` etc.); ``phi`` is ``None``
    under Model 2 and the mixing scalars stay at 1 under normal laws.
    """

    beta: np.ndarray
    b: np.ndarray
    Sigma_b: np.ndarray
    nu_b: float
    lambda_b: np.ndarray
    phi: float | None = None
    delta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    Sigma_d: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    nu_d: float = np.inf
    lambda_d: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def copy(self) -> "ParamState":
        return replace(
            self,
            **{
                k: (v.copy() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()
            },
        )

    @classmethod
    def zeros(cls, spec: ModelSpec, m: int) -> "ParamState":
        qd = spec.d_dim if spec.model2 else 0
        return cls(
            beta=np.zeros(spec.p),
            b=np.zeros((m, spec.q)),
            Sigma_b=np.eye(spec.q),
            nu_b=10.0 if spec.re_law_b == "t" else np.inf,
            lambda_b=np.ones(m),
            phi=None if spec.model2 else 1.0,
            delta=np.zeros(spec.p_star),
            d=np.zeros((m, qd)),
            Sigma_d=np.eye(0 if spec.tie_random_effects else qd),
            nu_d=10.0 if (spec.model2 and not spec.tie_random_effects and spec.re_law_d == "t") else np.inf,
            lambda_d=np.ones(m),
        )


# ---------------------------------------------------------------- predictors


def mean_response(eta):
    """Inverse logit; stable for large ``|eta|``."""
    out = expit(eta)
    return float(out) if np.ndim(out) == 0 else out


def precision_response(tau):
    """``exp(tau)``; ``tau > 700`` is refused rather than overflowing."""
    tau_arr = np.asarray(tau, dtype=float)
    bad = np.flatnonzero(np.atleast_1d(tau_arr) > TAU_MAX)
    if bad.size:
        raise DomainError(
            f"log-precision {np.atleast_1d(tau_arr)[bad[0]]:.4g} at observation {bad[0] + 1} exceeds {TAU_MAX}"
        )
    out = np.exp(tau_arr)
    return float(out) if np.ndim(out) == 0 else out


def linear_predictor_location(data: GroupedDataset, state: ParamState, i=None, j=None):
    """``eta = X beta + rowwise(Z * b[group])``.

    With ``i`` and ``j`` given, returns the scalar for observation ``j`` of
    group ``i`` (both zero-based).
    """
    beta = np.asarray(state.beta, dtype=float)
    if beta.shape != (data.X.shape[1],) or state.b.shape[1:] != (data.Z.shape[1],):
        raise ValueError("coefficient dimensions do not match the design")
    if i is not None:
        row = _row_index(data, i, j)
        return float(data.X[row] @ beta + data.Z[row] @ state.b[i])
    return data.X @ beta + np.einsum("nk,nk->n", data.Z, state.b[data.group])


def linear_predictor_precision(data: GroupedDataset, state: ParamState, i=None, j=None):
    qs = data.H.shape[1]
    if np.shape(state.delta) != (data.W.shape[1],) or state.d.shape[1] < qs:
        raise ValueError("coefficient dimensions do not match the design")
    d = state.d[:, :qs]
    if i is not None:
        row = _row_index(data, i, j)
        return float(data.W[row] @ state.delta + data.H[row] @ d[i])
    return data.W @ state.delta + np.einsum("nk,nk->n", data.H, d[data.group])


def _row_index(data: GroupedDataset, i: int, j: int) -> int:
    starts = np.concatenate([[0], np.cumsum(data.sizes)])
    if not (0 <= i < data.m) or not (0 <= j < starts[i + 1] - starts[i]):
        raise IndexError(f"no observation ({i}, {j})")
    return int(starts[i] + j)


# ---------------------------------------------------------------- likelihood


def beta_loglik_terms(log_y, log1m_y, mu, phi):
    """Per-observation log density, with ``mu`` floored away from 0 and 1."""
    lo, hi = MU_FLOOR, 1.0 - MU_FLOOR
    if np.any(mu < lo) or np.any(mu > hi):
        _clamp_counter[0] += 1
        logger.debug("mean clamped into [%g, %g]", lo, hi)
        mu = np.clip(mu, lo, hi)
    a = mu * phi
    b = phi - a
    return gammaln(phi) - gammaln(a) - gammaln(b) + (a - 1.0) * log_y + (b - 1.0) * log1m_y


def observation_precision(spec: ModelSpec, data: GroupedDataset, state: ParamState):
    if spec.model2:
        return precision_response(linear_predictor_precision(data, state))
    return state.phi


def log_likelihood_terms(spec: ModelSpec, state: ParamState, data: GroupedDataset) -> np.ndarray:
    """Per-observation log-likelihood contributions."""
    mu = expit(linear_predictor_location(data, state))
    phi = observation_precision(spec, data, state)
    if np.any(np.asarray(phi) <= 0):
        raise DomainError("precision must be positive")
    return beta_loglik_terms(data.log_y, data.log1m_y, mu, phi)


def log_likelihood(spec: ModelSpec, state: ParamState, data: GroupedDataset) -> float:
    return float(np.sum(log_likelihood_terms(spec, state, data)))
