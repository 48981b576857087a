"""Deviance-based model comparison: DIC, EAIC and EBIC.

``p_count`` counts the fixed-dimension parameters only: fixed effects of both
submodels, one for a common ``phi``, ``k (k + 1) / 2`` per scale matrix and
one per degrees-of-freedom parameter.  Random effects enter ``dhat`` through
their posterior means but are not counted.  This is a convention; it is
written into every report.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .model import GroupedDataset, ModelSpec, ParamState, log_likelihood

__all__ = ["CriteriaReport", "deviance", "count_parameters", "compute_criteria", "comparison_table"]


@dataclass(frozen=True)
class CriteriaReport:
    dbar: float
    dhat: float
    p_d: float
    dic: float
    eaic: float
    ebic: float
    p_count: int
    n_obs: int

    def to_dict(self) -> dict:
        return asdict(self)


def deviance(spec: ModelSpec, state: ParamState, data: GroupedDataset) -> float:
    """``-2`` times the log-likelihood."""
    return -2.0 * log_likelihood(spec, state, data)


def count_parameters(spec: ModelSpec) -> int:
    k = spec.p
    if spec.q:
        k += spec.q * (spec.q + 1) // 2
        k += spec.re_law_b == "t"
    if not spec.model2:
        return k + 1
    k += spec.p_star
    if spec.q_star and not spec.tie_random_effects:
        k += spec.q_star * (spec.q_star + 1) // 2
        k += spec.re_law_d == "t"
    return k


def _merge(traces):
    from .sampler import Trace

    if isinstance(traces, Trace):
        return traces
    return Trace.merge(traces)


def compute_criteria(spec: ModelSpec, traces, data: GroupedDataset, min_draws: int = 100) -> CriteriaReport:
    """DIC, EAIC and EBIC from one trace or several chains (pooled)."""
    trace = _merge(traces)
    if len(trace) < min_draws:
        raise ValueError(f"criteria need at least {min_draws} retained draws, got {len(trace)}")
    dbar = float(np.mean(trace.deviance))
    dhat = deviance(spec, trace.mean_state(), data)
    p_d = dbar - dhat
    k = count_parameters(spec)
    n = data.n_obs
    return CriteriaReport(
        dbar=dbar,
        dhat=dhat,
        p_d=p_d,
        dic=dbar + p_d,
        eaic=dbar + 2.0 * k,
        ebic=dbar + k * float(np.log(n)),
        p_count=k,
        n_obs=n,
    )


def comparison_table(reports: dict) -> str:
    """CSV with one row per labelled model, sorted by DIC ascending."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "DIC", "EAIC", "EBIC", "pD"])
    for label, r in sorted(reports.items(), key=lambda kv: kv[1].dic):
        w.writerow([label, f"{r.dic:.3f}", f"{r.eaic:.3f}", f"{r.ebic:.3f}", f"{r.p_d:.3f}"])
    return buf.getvalue()
