"""Synthetic data in the two-covariate random-slope design, plus the replication harness.

The generator draws ``x2, x3 ~ U(0, 1)``, random effects ``b_i`` from a
bivariate t (or normal) law, and responses

    logit(mu_ij) = (beta1 + b_i1) + (beta2 + b_i2) x_ij2 + beta3 x_ij3,
    y_ij ~ beta(mu_ij phi, (1 - mu_ij) phi).
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .distributions import _beta_open, is_positive_definite
from .model import GroupedDataset, ModelSpec, ParamState

logger = logging.getLogger(__name__)

SIM_SIGMA = ((1.0, -0.3), (-0.3, 0.2))


@dataclass
class GenConfig:
    m: int = 100
    n_per_group: int = 5
    beta_true: tuple = (-2.0, 1.0, 2.0)
    phi_true: float = 49.0
    nu_true: float = 10.0
    sigma_true: tuple = SIM_SIGMA
    seed: int = 0
    freeze_covariates: bool = False

    def __post_init__(self):
        if self.m < 1 or self.n_per_group < 1:
            raise ValueError("m and n_per_group must be positive")
        if len(self.beta_true) != 3:
            raise ValueError("the generator has exactly three fixed effects")
        if not (self.phi_true > 0 and np.isfinite(self.phi_true)):
            raise ValueError("phi_true must be positive and finite")
        if not self.nu_true > 0:
            raise ValueError("nu_true must be positive (use math.inf for normal effects)")
        sig = np.asarray(self.sigma_true, dtype=float)
        if sig.shape != (2, 2) or not is_positive_definite(sig):
            raise ValueError("sigma_true must be a 2x2 SPD matrix")

    @property
    def normal(self) -> bool:
        return math.isinf(self.nu_true)


GEN_PRESETS = {
    "paper-sim": GenConfig(),
    "desk-sim": GenConfig(m=50),
}


def _draw_effects(config: GenConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    sigma = np.asarray(config.sigma_true, dtype=float)
    z = rng.standard_normal((config.m, 2)) @ np.linalg.cholesky(sigma).T
    if config.normal:
        lam = np.ones(config.m)
    else:
        lam = rng.gamma(0.5 * config.nu_true, 2.0 / config.nu_true, size=config.m)
    return z / np.sqrt(lam)[:, None], lam


def generate_dataset(config: GenConfig, covariates: np.ndarray | None = None):
    """Simulate one dataset.

    Returns ``(data, truth)`` where ``data`` has fixed design ``(1, x2, x3)``
    and random design ``(1, x2)``.  ``covariates`` (an ``(m*n, 2)`` array)
    overrides the uniform draws, which is how replicates freeze covariates.
    """
    rng = np.random.default_rng(config.seed)
    m, n = config.m, config.n_per_group
    x = rng.random((m * n, 2)) if covariates is None else np.asarray(covariates, dtype=float)
    b, lam = _draw_effects(config, rng)
    group = np.repeat(np.arange(m), n)
    X = np.column_stack([np.ones(m * n), x])
    Z = X[:, :2]
    eta = X @ np.asarray(config.beta_true, dtype=float) + np.sum(Z * b[group], axis=1)
    mu = 1.0 / (1.0 + np.exp(-eta))
    y = _beta_open(rng, mu * config.phi_true, (1.0 - mu) * config.phi_true)
    data = GroupedDataset(
        y=y,
        X=X,
        group=group,
        unit_ids=list(range(1, m + 1)),
        Z=Z,
        x_names=["1", "x2", "x3"],
        z_names=["1", "x2"],
    )
    truth = ParamState(
        beta=np.asarray(config.beta_true, dtype=float),
        b=b,
        Sigma_b=np.asarray(config.sigma_true, dtype=float),
        nu_b=float(config.nu_true),
        lambda_b=lam,
        phi=float(config.phi_true),
    )
    return data, truth


def dataset_frame(data: GroupedDataset) -> pd.DataFrame:
    """Long table with columns ``unit, y, x2, x3``."""
    units = np.asarray(data.unit_ids, dtype=object)[data.group]
    return pd.DataFrame({"unit": units, "y": data.y, "x2": data.X[:, 1], "x3": data.X[:, 2]})


def truth_dict(truth: ParamState, config: GenConfig) -> dict:
    return {
        "beta": truth.beta.tolist(),
        "phi": truth.phi,
        "nu_b": None if config.normal else truth.nu_b,
        "Sigma_b": np.asarray(truth.Sigma_b).tolist(),
        "b": truth.b.tolist(),
        "seed": config.seed,
        "m": config.m,
        "n_per_group": config.n_per_group,
    }


# ---------------------------------------------------------------- replication


SIM_SPEC_T = ModelSpec(p=3, q=2, re_law_b="t")
SIM_SPEC_NORMAL = ModelSpec(p=3, q=2, re_law_b="normal")

# Reported parameters: fixed effects, phi, the three distinct Sigma entries.
REPORTED = ("beta.1", "beta.2", "beta.3", "phi", "Sigma_b.1.1", "Sigma_b.1.2", "Sigma_b.2.2")


@dataclass
class ReplicationResult:
    nu_true: float
    n_reps: int
    bias: dict = field(default_factory=dict)  # family -> {param: value}
    rmse: dict = field(default_factory=dict)
    criteria: dict = field(default_factory=dict)  # family -> {DIC, EAIC, EBIC, pD}
    mprf: dict = field(default_factory=dict)  # family -> list per replicate
    estimates: dict = field(default_factory=dict)  # family -> list of {param: value}
    failures: dict = field(default_factory=dict)  # family -> list of (replicate, message)

    def check(self) -> bool:
        """``rmse >= |bias|`` for every parameter and family."""
        return all(
            self.rmse[f][k] >= abs(self.bias[f][k]) - 1e-12 for f in self.bias for k in self.bias[f]
        )

    def dic_gap(self) -> float:
        """Mean DIC of the t fit minus that of the normal fit."""
        return self.criteria["t"]["DIC"] - self.criteria["normal"]["DIC"]

    def table_rows(self) -> list[dict]:
        rows = []
        nu = "inf" if math.isinf(self.nu_true) else f"{self.nu_true:g}"
        for fam in self.bias:
            for stat, src in (("bias", self.bias), ("rmse", self.rmse)):
                rows.append({"nu_true": nu, "fit": fam, "statistic": stat, **src[fam]})
        return rows

    def criteria_rows(self) -> list[dict]:
        nu = "inf" if math.isinf(self.nu_true) else f"{self.nu_true:g}"
        return [
            {"nu_true": nu, "fit": fam, **vals, "n_ok": len(self.estimates[fam]), "n_failed": len(self.failures[fam])}
            for fam, vals in self.criteria.items()
        ]

    def write_csv(self, directory) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        a = _write_rows(directory / "bias_rmse.csv", self.table_rows())
        b = _write_rows(directory / "criteria.csv", self.criteria_rows())
        return a, b


def _write_rows(path: Path, rows: list[dict]) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    tmp.replace(path)
    return path


def _truth_values(config: GenConfig) -> dict:
    sig = np.asarray(config.sigma_true, dtype=float)
    vals = {f"beta.{k + 1}": float(v) for k, v in enumerate(config.beta_true)}
    vals.update({"phi": float(config.phi_true), "Sigma_b.1.1": sig[0, 0], "Sigma_b.1.2": sig[0, 1], "Sigma_b.2.2": sig[1, 1]})
    return vals


def replication_study(
    gen_config: GenConfig,
    n_reps: int,
    sampler_config,
    catalog=None,
    fit_specs: dict | None = None,
    progress=None,
) -> ReplicationResult:
    """Simulate ``n_reps`` datasets and fit each with every spec in ``fit_specs``.

    Replicate ``r`` uses generator seed ``gen_config.seed + r`` and sampler seed
    ``sampler_config.seed + r``.  Failed fits are counted per family and
    excluded from the aggregates.
    """
    from dataclasses import replace

    from .criteria import compute_criteria
    from .diagnostics import mpsrf_traces
    from .priors import PRIOR_PRESETS
    from .sampler import SamplerError, run_ensemble

    if n_reps < 2:
        raise ValueError("a replication study needs at least two replicates")
    catalog = catalog or PRIOR_PRESETS["paper-sim"]
    fit_specs = fit_specs or {"t": SIM_SPEC_T, "normal": SIM_SPEC_NORMAL}
    truth = _truth_values(gen_config)
    result = ReplicationResult(nu_true=gen_config.nu_true, n_reps=n_reps)
    crit_acc = {f: [] for f in fit_specs}
    for fam in fit_specs:
        result.estimates[fam], result.failures[fam], result.mprf[fam] = [], [], []
    frozen = None
    if gen_config.freeze_covariates:
        frozen = np.random.default_rng(gen_config.seed).random((gen_config.m * gen_config.n_per_group, 2))
    for r in range(n_reps):
        data, _ = generate_dataset(replace(gen_config, seed=gen_config.seed + r), covariates=frozen)
        cfg = replace(sampler_config, seed=sampler_config.seed + r)
        for fam, spec in fit_specs.items():
            try:
                traces = run_ensemble(spec, catalog, data, cfg)
            except (SamplerError, ValueError, np.linalg.LinAlgError) as exc:
                logger.warning("replicate %d (%s fit) failed: %s", r, fam, exc)
                result.failures[fam].append((r, str(exc)))
                continue
            merged = type(traces[0]).merge(traces)
            result.estimates[fam].append({k: float(np.mean(merged.column(k))) for k in truth})
            rep = compute_criteria(spec, merged, data)
            crit_acc[fam].append({"DIC": rep.dic, "EAIC": rep.eaic, "EBIC": rep.ebic, "pD": rep.p_d})
            if len(traces) > 1:
                result.mprf[fam].append(mpsrf_traces(traces))
            if progress:
                progress(r, fam)
    for fam in fit_specs:
        est = result.estimates[fam]
        if not est:
            raise RuntimeError(f"every replicate of the {fam} fit failed")
        err = {k: np.array([e[k] - truth[k] for e in est]) for k in truth}
        result.bias[fam] = {k: float(v.mean()) for k, v in err.items()}
        result.rmse[fam] = {k: float(np.sqrt(np.mean(v**2))) for k, v in err.items()}
        result.criteria[fam] = {c: float(np.mean([x[c] for x in crit_acc[fam]])) for c in ("DIC", "EAIC", "EBIC", "pD")}
    return result
