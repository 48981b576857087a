"""Convergence and Monte Carlo error diagnostics.

The spectral density at frequency zero is estimated everywhere by batch means
with ``floor(sqrt(n))`` batches, so Geweke, Heidelberger-Welch, ESS and MC
error share one code path.  Quantiles use linear interpolation between order
statistics (numpy's default, R's type 7).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, kv

__all__ = [
    "DegenerateChainError",
    "spectral_variance",
    "psrf",
    "mpsrf",
    "mpsrf_traces",
    "convergence_matrix",
    "geweke",
    "heidelberger_welch",
    "HWResult",
    "pcramer",
    "mc_error",
    "ess",
    "autocorr",
    "summarize",
    "DiagnosticsReport",
    "diagnose",
]


class DegenerateChainError(ValueError):
    """Raised when a diagnostic is undefined for constant or singular input."""


def _chain(x, min_len: int = 10) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size < min_len:
        raise ValueError(f"chain needs at least {min_len} points, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("chain contains non-finite values")
    return x


def spectral_variance(x) -> float:
    """Batch-means estimate of ``2 pi f(0)``, the asymptotic variance of the mean times n."""
    x = np.asarray(x, dtype=float)
    n = x.size
    n_batches = max(int(math.isqrt(n)), 2)
    size = n // n_batches
    if size < 1:
        raise ValueError("chain too short for batch means")
    means = x[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    return float(size * np.var(means, ddof=1))


# ---------------------------------------------------------------- scale reduction


def _stack(chains) -> np.ndarray:
    arrs = [np.asarray(c, dtype=float) for c in chains]
    if len(arrs) < 2:
        raise ValueError("scale reduction needs at least two chains")
    n = arrs[0].shape[0]
    if any(a.shape[0] != n for a in arrs):
        raise ValueError("chains must have equal length")
    if n < 10:
        raise ValueError("chains need at least 10 draws")
    return np.stack(arrs)


def psrf(chains, corrected: bool = True) -> float:
    """Potential scale reduction factor of one scalar parameter.

    ``R^2 = (n - 1) / n + k B / (n W)`` with ``B / n`` the variance of the chain
    means and ``W`` the mean within-chain variance.  ``k = (M + 1) / M``
    (the usual Gelman-Rubin factor) unless ``corrected=False``, which gives
    the plain two-factor estimator ``k = 1``.  Both agree when ``B = 0``.
    """
    x = _stack(chains)
    M, n = x.shape[0], x.shape[1]
    W = float(np.mean(np.var(x, axis=1, ddof=1)))
    if W <= 0:
        raise DegenerateChainError("degenerate chains: within-chain variance is zero")
    B_over_n = float(np.var(x.mean(axis=1), ddof=1))
    k = (M + 1) / M if corrected else 1.0
    return math.sqrt((n - 1) / n + k * B_over_n / W)


def mpsrf(chains) -> float:
    """Brooks-Gelman multivariate scale reduction factor.

    ``chains`` is a sequence of ``(n, d)`` arrays.  Returns
    ``(n - 1) / n + (M + 1) / M * lambda_max(W^{-1} B / n)``.
    """
    x = _stack([np.asarray(c, dtype=float).reshape(len(c), -1) for c in chains])
    M, n, d = x.shape
    centered = x - x.mean(axis=1, keepdims=True)
    W = np.einsum("mni,mnj->ij", centered, centered) / (M * (n - 1))
    means = x.mean(axis=1)
    B_over_n = np.atleast_2d(np.cov(means, rowvar=False, ddof=1))
    try:
        chol = np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise DegenerateChainError(
            "pooled within-chain covariance is singular; thin the chains or drop constant parameters"
        ) from None
    # eigenvalues of W^{-1} B/n through the symmetric form L^{-1} (B/n) L^{-T}
    inv = np.linalg.solve(chol, np.eye(d))
    lam = np.linalg.eigvalsh(inv @ B_over_n @ inv.T).max()
    return float((n - 1) / n + (M + 1) / M * lam)


def _log_cholesky(S: np.ndarray) -> np.ndarray:
    """Lower-triangular Cholesky entries with the diagonal logged; ``S`` is ``(n, k, k)``."""
    L = np.linalg.cholesky(S)
    k = S.shape[-1]
    idx = np.tril_indices(k)
    out = L[:, idx[0], idx[1]]
    diag = idx[0] == idx[1]
    out[:, diag] = np.log(out[:, diag])
    return out


def convergence_matrix(trace) -> np.ndarray:
    """Unconstrained summary coordinates of a trace for ``mpsrf``.

    Fixed effects as they are, ``log`` of ``phi`` and of degrees of freedom,
    and the log-Cholesky coordinates of each scale matrix.  Random effects
    are left out.
    """
    cols = []
    for block in ("beta", "delta"):
        if trace.has(block):
            cols.append(trace.block(block))
    for block in ("phi", "nu_b", "nu_d"):
        if trace.has(block):
            cols.append(np.log(trace.block(block))[:, None])
    for block in ("Sigma_b", "Sigma_d"):
        if trace.has(block):
            cols.append(_log_cholesky(trace.block(block)))
    mat = np.column_stack(cols)
    keep = np.ptp(mat, axis=0) > 0
    return mat[:, keep]


def mpsrf_traces(traces) -> float:
    """``mpsrf`` over the unconstrained parameter summary of several traces."""
    mats = [convergence_matrix(t) for t in traces]
    keep = np.all([np.ptp(m, axis=0) > 0 for m in mats], axis=0) if len({m.shape[1] for m in mats}) == 1 else None
    if keep is not None:
        mats = [m[:, keep] for m in mats]
    return mpsrf(mats)


# ---------------------------------------------------------------- stationarity


def geweke(chain, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    """Geweke z-score comparing the first ``frac_a`` and last ``frac_b`` of a chain."""
    if not (0 < frac_a < 1 and 0 < frac_b < 1) or frac_a + frac_b > 1:
        raise ValueError("need 0 < frac_a, frac_b and frac_a + frac_b <= 1")
    x = _chain(chain)
    n = x.size
    a = x[: int(math.floor(frac_a * n))]
    b = x[n - int(math.floor(frac_b * n)) :]
    if a.size < 10 or b.size < 10:
        raise ValueError("each Geweke segment needs at least 10 points")
    va, vb = spectral_variance(a) / a.size, spectral_variance(b) / b.size
    if va + vb <= 0:
        raise DegenerateChainError("zero-variance segment")
    return float((a.mean() - b.mean()) / math.sqrt(va + vb))


def pcramer(q, eps: float = 1e-10):
    """Distribution function of the Cramer-von Mises statistic of a Brownian bridge.

    Series in modified Bessel functions of the second kind, summed until a
    term drops below ``eps``.  A fixed four-term truncation is not monotone
    beyond ``q`` of about 3, so for ``q > 4`` (where the function exceeds
    ``1 - 1e-10``) the value is 1.
    """
    q = np.asarray(q, dtype=float)
    out = np.zeros_like(q)
    pos = (q > 0) & (q <= 4)
    qq = q[pos]
    total = np.zeros_like(qq)
    for k in range(200):
        z = np.exp(gammaln(k + 0.5) - gammaln(k + 1)) * math.sqrt(4 * k + 1) / (math.pi**1.5 * np.sqrt(qq))
        u = (4 * k + 1) ** 2 / (16 * qq)
        with np.errstate(over="ignore", under="ignore"):
            term = z * np.exp(-u) * kv(0.25, u)
        total += term
        if np.all(np.abs(term) < eps):
            break
    out[pos] = total
    out[q > 4] = 1.0
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class HWResult:
    stationary: bool
    kept_fraction: float
    halfwidth_ok: bool
    start_index: int = 0
    pvalue: float = float("nan")
    mean: float = float("nan")
    halfwidth: float = float("nan")


def heidelberger_welch(chain, alpha: float = 0.05, halfwidth_ratio: float = 0.1) -> HWResult:
    """Heidelberger-Welch stationarity and halfwidth tests.

    The Cramer-von Mises statistic of the scaled cumulative-sum bridge is
    tested after discarding 0%, 10%, ..., 50% of the chain; the spectral
    density is estimated once from the second half.  If a start passes, the
    halfwidth test checks that the 95% interval for the mean of the retained
    part is shorter than ``halfwidth_ratio * |mean|``.
    """
    x = _chain(chain, min_len=50)
    n_total = x.size
    s0 = spectral_variance(x[n_total // 2 :])
    step = n_total // 10
    for start in range(0, n_total // 2 + 1, step):
        y = x[start:]
        n = y.size
        if s0 <= 0:
            break
        bridge = np.cumsum(y) - y.mean() * np.arange(1, n + 1)
        stat = float(np.sum(bridge**2) / (n * s0) / n)
        p = 1.0 - pcramer(stat)
        if p > alpha:
            hw = 1.96 * math.sqrt(spectral_variance(y) / n)
            ybar = float(y.mean())
            ok = bool(abs(hw) <= halfwidth_ratio * abs(ybar)) if ybar != 0 else False
            return HWResult(True, n / n_total, ok, start, p, ybar, hw)
    return HWResult(False, 0.0, False, -1)


# ---------------------------------------------------------------- MC error / ESS


def mc_error(chain) -> float:
    """Batch-means standard error of the chain mean."""
    x = _chain(chain, min_len=100)
    return math.sqrt(spectral_variance(x) / x.size)


def ess(chain) -> float:
    """Effective sample size ``n var(x) / sigma^2``, clamped to ``(0, n]``."""
    x = _chain(chain, min_len=100)
    n = x.size
    var = float(np.var(x, ddof=1))
    if var == 0:
        return float(n)
    s = spectral_variance(x)
    if s <= 0:
        return float(n)
    return float(min(max(n * var / s, np.finfo(float).tiny), n))


def autocorr(chain, max_lag: int = 50) -> np.ndarray:
    """Biased autocorrelation estimates at lags ``0..max_lag``."""
    x = _chain(chain, min_len=2)
    d = x - x.mean()
    denom = float(d @ d)
    max_lag = min(max_lag, x.size - 1)
    if denom == 0:
        out = np.zeros(max_lag + 1)
        out[0] = 1.0
        return out
    return np.array([1.0] + [float(d[:-k] @ d[k:]) / denom for k in range(1, max_lag + 1)])


# ---------------------------------------------------------------- summaries


def _as_traces(traces):
    if isinstance(traces, (list, tuple)):
        return list(traces)
    return [traces]


def summarize(traces, names=None) -> dict:
    """Posterior summary per parameter: mean, median, sd, mc_error and 95% CI.

    Accepts a trace or a sequence of chains; with several chains the MC error
    combines per-chain batch-means variances.
    """
    traces = _as_traces(traces)
    names = names or traces[0].names
    total = sum(len(t) for t in traces)
    if total < 100:
        raise ValueError(f"summaries need at least 100 retained draws, got {total}")
    out = {}
    for name in names:
        cols = [t.column(name) for t in traces]
        x = np.concatenate(cols)
        spec_var = sum(len(c) * spectral_variance(c) for c in cols if len(c) >= 4)
        lo, med, hi = np.quantile(x, [0.025, 0.5, 0.975])
        out[name] = {
            "mean": float(x.mean()),
            "median": float(med),
            "sd": float(x.std(ddof=1)),
            "mc_error": float(math.sqrt(max(spec_var, 0.0)) / total),
            "ci_lower": float(lo),
            "ci_upper": float(hi),
        }
    return out


def format_summary(summary: dict) -> str:
    rows = [f"{'parameter':<16}{'mean':>12}{'mc_error':>12}{'median':>12}{'2.5%':>12}{'97.5%':>12}"]
    for name, s in summary.items():
        rows.append(
            f"{name:<16}{s['mean']:>12.5g}{s['mc_error']:>12.3g}{s['median']:>12.5g}"
            f"{s['ci_lower']:>12.5g}{s['ci_upper']:>12.5g}"
        )
    return "\n".join(rows) + "\n"


def summary_csv(summary: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "mean", "median", "sd", "mc_error", "ci_lower", "ci_upper"])
    for name, s in summary.items():
        w.writerow([name] + [repr(float(s[k])) for k in ("mean", "median", "sd", "mc_error", "ci_lower", "ci_upper")])
    return buf.getvalue()


@dataclass
class DiagnosticsReport:
    psrf: dict = field(default_factory=dict)
    mpsrf: float = float("nan")
    geweke_z: dict = field(default_factory=dict)
    heidelberger: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)
    mc_error: dict = field(default_factory=dict)
    lag_autocorr: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return bool(np.isfinite(self.mpsrf) and self.mpsrf < 1.2)

    def rows(self) -> list[tuple[str, str, float]]:
        out = [("(all)", "mpsrf", self.mpsrf)]
        for name in self.ess:
            out.append((name, "psrf", self.psrf.get(name, float("nan"))))
            out.append((name, "geweke_z", self.geweke_z.get(name, float("nan"))))
            hw = self.heidelberger.get(name)
            if hw is not None:
                out.append((name, "hw_stationary", float(hw.stationary)))
                out.append((name, "hw_kept_fraction", hw.kept_fraction))
                out.append((name, "hw_halfwidth_ok", float(hw.halfwidth_ok)))
            out.append((name, "ess", self.ess[name]))
            out.append((name, "mc_error", self.mc_error[name]))
            for lag, r in zip((1, 5, 10), self.lag_autocorr.get(name, ())):
                out.append((name, f"autocorr_lag{lag}", r))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "statistic", "value"])
        for p, s, v in self.rows():
            w.writerow([p, s, repr(float(v))])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"mprf: {self.mpsrf:.4f}" if np.isfinite(self.mpsrf) else "mprf: unavailable"]
        lines += [f"note: {n}" for n in self.notes]
        lines.append(f"{'parameter':<16}{'psrf':>8}{'geweke':>9}{'HW':>6}{'kept':>7}{'HWhalf':>8}{'ess':>10}{'mc_error':>11}")
        for name in self.ess:
            hw = self.heidelberger.get(name)
            lines.append(
                f"{name:<16}{self.psrf.get(name, float('nan')):>8.4f}{self.geweke_z.get(name, float('nan')):>9.3f}"
                f"{('pass' if hw and hw.stationary else 'fail'):>6}{(hw.kept_fraction if hw else float('nan')):>7.2f}"
                f"{('pass' if hw and hw.halfwidth_ok else 'fail'):>8}{self.ess[name]:>10.1f}{self.mc_error[name]:>11.4g}"
            )
        return "\n".join(lines) + "\n"


def diagnose(traces, names=None) -> DiagnosticsReport:
    """Run every diagnostic on the given chains.

    Random-effect columns are skipped unless ``names`` asks for them.
    """
    traces = _as_traces(traces)
    names = names or [n for n in traces[0].names if not n.startswith(("b.", "d."))]
    rep = DiagnosticsReport()
    if len(traces) < 2:
        rep.notes.append("PSRF unavailable: a single chain was run")
    else:
        try:
            rep.mpsrf = mpsrf_traces(traces)
        except (DegenerateChainError, ValueError) as exc:
            rep.notes.append(f"mprf unavailable: {exc}")
    for name in names:
        cols = [t.column(name) for t in traces]
        pooled = np.concatenate(cols)
        if len(traces) >= 2:
            try:
                rep.psrf[name] = psrf(cols)
            except (DegenerateChainError, ValueError):
                rep.psrf[name] = float("nan")
        first = cols[0]
        try:
            rep.geweke_z[name] = geweke(first)
        except (DegenerateChainError, ValueError):
            rep.geweke_z[name] = float("nan")
        try:
            rep.heidelberger[name] = heidelberger_welch(first)
        except ValueError:
            rep.heidelberger[name] = HWResult(False, 0.0, False, -1)
        if pooled.size >= 100:
            rep.ess[name] = float(sum(ess(c) for c in cols if c.size >= 100))
            rep.mc_error[name] = float(
                math.sqrt(sum(len(c) * spectral_variance(c) for c in cols)) / pooled.size
            )
        else:
            rep.ess[name], rep.mc_error[name] = float("nan"), float("nan")
        ac = autocorr(first, 10)
        rep.lag_autocorr[name] = [float(ac[k]) for k in (1, 5, 10) if k < ac.size]
    return rep
