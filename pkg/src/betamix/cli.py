"""Command-line front end.

Subcommands: ``simulate``, ``fit``, ``summarize``, ``compare``, ``density``,
``replicate`` and ``presets``.  Relative output paths are resolved against
``$BETAMIX_OUT`` when it is set.  Exit codes: 0 success, 1 usage error, 2 data
or spec error, 3 sampler failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .criteria import comparison_table, compute_criteria, CriteriaReport
from .diagnostics import diagnose, format_summary, summarize, summary_csv
from .model import DomainError
from .presets import PRESETS, DESCRIPTIONS, load_prater, preset_text
from .sampler import SamplerError, Trace, run_ensemble
from .simulate import GEN_PRESETS, GenConfig, dataset_frame, generate_dataset, replication_study, truth_dict
from .specdsl import SpecError, parse_spec_file

logger = logging.getLogger("betamix")

OUT_ENV = "BETAMIX_OUT"
BUDGETS = {
    "tiny": {"n_iterations": 600, "burn_in": 200, "thin": 1},
    "desk": {"n_iterations": 20000, "burn_in": 5000, "thin": 1},
    "paper": {"n_iterations": 100000, "burn_in": 10000, "thin": 10},
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- file helpers


def _out_path(p) -> Path:
    p = Path(p)
    root = os.environ.get(OUT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _atomic_write(path: Path, data, binary: bool = False) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb" if binary else "w", newline=None if binary else "") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _checksum(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if dataclasses.is_dataclass(o):
            return dataclasses.asdict(o)
        return str(o)

    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def _read_data(arg: str) -> tuple[pd.DataFrame, bytes, str]:
    if arg == "prater":
        from importlib.resources import files

        raw = files("betamix").joinpath("data/prater.csv").read_bytes()
        return load_prater(), raw, "prater"
    path = Path(arg)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    raw = path.read_bytes()
    try:
        table = pd.read_csv(path, comment="#")
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return table, raw, str(path.resolve())


def _read_spec(args) -> str:
    if args.spec and args.preset:
        raise UsageError("give either --spec or --preset, not both")
    if args.preset:
        try:
            return preset_text(args.preset)
        except KeyError as exc:
            raise DataError(str(exc.args[0])) from None
    if not args.spec:
        raise UsageError("one of --spec or --preset is required")
    path = Path(args.spec)
    if not path.is_file():
        raise DataError(f"spec file not found: {path}")
    return path.read_text()


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise DataError(f"config file not found: {cfg_path}")
        try:
            raw = json.loads(cfg_path.read_text())
            if raw.get("nu_true") in (None, "inf", "normal"):
                raw["nu_true"] = math.inf
            config = GenConfig(**raw)
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise DataError(f"invalid generator config: {exc}") from None
    else:
        if args.preset not in GEN_PRESETS:
            raise DataError(f"unknown preset {args.preset!r}; available: {', '.join(GEN_PRESETS)}")
        config = GEN_PRESETS[args.preset]
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    data, truth = generate_dataset(config)
    out = _out_path(args.out)
    frame = dataset_frame(data)
    _atomic_write(out, frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
    _atomic_write(out.with_suffix(".truth.json"), _json(truth_dict(truth, config)))
    print(f"wrote {len(frame)} rows to {out}")
    return 0


def _fit_to_dir(spec_text: str, data_arg: str, out: Path, args) -> dict:
    try:
        specfile = parse_spec_file(spec_text)
    except SpecError as exc:
        raise DataError(f"spec: {exc}") from None
    table, raw, source = _read_data(data_arg)
    spec, data = specfile.build(table)
    budget = dict(BUDGETS[args.budget])
    budget.update({k: v for k, v in specfile.sampler_options.items() if k in budget})
    overrides = {
        "n_iterations": args.iterations,
        "burn_in": args.burn_in,
        "thin": args.thin,
        "n_chains": args.chains,
        "seed": args.seed,
    }
    if args.iterations is not None and args.burn_in is None:
        overrides["burn_in"] = min(budget["burn_in"], args.iterations // 4)
    opts = {**specfile.sampler_options, **budget, **{k: v for k, v in overrides.items() if v is not None}}
    opts.setdefault("n_chains", 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        config = dataclasses.replace(specfile.sampler_config(), **opts)
    traces = run_ensemble(spec, specfile.catalog, data, config)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "spec.txt", spec_text)
    for t in traces:
        t.to_csv(out / f"chain_{t.chain_id}.csv")
    report = diagnose(traces)
    summary = summarize(traces)
    crit = compute_criteria(spec, traces, data)
    meta = {
        "version": __version__,
        "data_source": source,
        "data_sha256": _checksum(raw),
        "seed": config.seed,
        "config": config.to_dict(),
        "model_spec": dataclasses.asdict(spec),
        "n_chains": len(traces),
        "acceptance": {t.chain_id: t.acceptance for t in traces},
        "mprf": report.mpsrf,
        "converged": report.converged,
        "unit_ids": [str(u) for u in data.unit_ids],
    }
    _atomic_write(out / "metadata.json", _json(meta))
    _atomic_write(out / "summary.csv", summary_csv(summary))
    _atomic_write(out / "summary.txt", format_summary(summary))
    _atomic_write(out / "diagnostics.csv", report.to_csv())
    _atomic_write(out / "diagnostics.txt", report.to_text())
    _atomic_write(out / "criteria.json", _json(crit.to_dict()))
    return {"summary": summary, "report": report, "criteria": crit, "meta": meta}


def cmd_fit(args) -> int:
    spec_text = _read_spec(args)
    out = _out_path(args.out)
    res = _fit_to_dir(spec_text, args.data, out, args)
    print(format_summary(res["summary"]), end="")
    print(res["report"].to_text().splitlines()[0])
    for note in res["report"].notes:
        print(f"note: {note}")
    c = res["criteria"]
    print(f"DIC {c.dic:.3f}  EAIC {c.eaic:.3f}  EBIC {c.ebic:.3f}  pD {c.p_d:.3f}")
    print(f"run written to {out}")
    return 0


def _load_run(run: Path) -> tuple[list[Trace], dict]:
    if not (run / "metadata.json").is_file():
        raise DataError(f"{run} is not a run directory (metadata.json missing)")
    meta = json.loads((run / "metadata.json").read_text())
    traces = [Trace.from_csv(p) for p in sorted(run.glob("chain_*.csv"))]
    if not traces:
        raise DataError(f"{run} holds no chain traces")
    return traces, meta


def cmd_summarize(args) -> int:
    run = _out_path(args.run)
    traces, _ = _load_run(run)
    text = summary_csv(summarize(traces))
    if args.out:
        _atomic_write(_out_path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_compare(args) -> int:
    if len(args.runs) < 2:
        raise UsageError("compare needs at least two run directories")
    reports, sums = {}, set()
    for r in args.runs:
        run = _out_path(r)
        if not (run / "criteria.json").is_file() or not (run / "metadata.json").is_file():
            raise DataError(f"unreadable run artifact: {run}")
        meta = json.loads((run / "metadata.json").read_text())
        sums.add(meta["data_sha256"])
        reports[run.name] = CriteriaReport(**json.loads((run / "criteria.json").read_text()))
    if len(sums) > 1:
        raise DataError("runs were fitted to different datasets (checksum mismatch)")
    table = comparison_table(reports)
    if args.out:
        _atomic_write(_out_path(args.out), table)
    sys.stdout.write(table)
    return 0


def density_table(values: np.ndarray, points: int = 200) -> pd.DataFrame:
    """Gaussian kernel density on a grid; bandwidth by Silverman's rule."""
    from scipy.stats import gaussian_kde

    values = np.asarray(values, dtype=float)
    if np.ptp(values) == 0:
        raise ValueError("zero variance: cannot estimate a density")
    kde = gaussian_kde(values, bw_method="silverman")
    h = float(np.sqrt(kde.covariance[0, 0]))
    grid = np.linspace(values.min() - 4 * h, values.max() + 4 * h, points)
    return pd.DataFrame({"x": grid, "density": kde(grid)})


def cmd_density(args) -> int:
    traces, _ = _load_run(_out_path(args.run))
    try:
        values = np.concatenate([t.column(args.param) for t in traces])
    except KeyError as exc:
        raise DataError(str(exc.args[0])) from None
    try:
        table = density_table(values, args.points)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    text = table.to_csv(index=False, float_format="%.10g", lineterminator="\n")
    if args.out:
        _atomic_write(_out_path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_replicate(args) -> int:
    from .sampler import SamplerConfig

    nu = math.inf if args.nu in ("inf", "normal") else float(args.nu)
    gen = GenConfig(m=args.m, nu_true=nu, seed=args.seed)
    budget = dict(BUDGETS[args.budget])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = SamplerConfig(n_chains=args.chains, seed=args.seed, **budget)
    res = replication_study(gen, args.n_reps, cfg, progress=lambda r, f: logger.info("replicate %d %s done", r, f))
    out = _out_path(args.out)
    res.write_csv(out)
    print(f"nu_true={args.nu}: mean DIC t={res.criteria['t']['DIC']:.3f} normal={res.criteria['normal']['DIC']:.3f}")
    print(f"tables written to {out}")
    return 0


def cmd_presets(args) -> int:
    if args.name:
        try:
            sys.stdout.write(preset_text(args.name))
        except KeyError as exc:
            raise DataError(str(exc.args[0])) from None
        return 0
    for name in PRESETS:
        print(f"{name:<12} {DESCRIPTIONS.get(name, '')}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="betamix", description="Bayesian mixed-effects beta regression")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a dataset")
    s.add_argument("--preset", default="paper-sim", help=f"one of {', '.join(GEN_PRESETS)}")
    s.add_argument("--config", help="JSON file with generator fields")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="simulated.csv")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a model and write a run directory")
    f.add_argument("--data", required=True, help="CSV file, or 'prater' for the bundled data")
    f.add_argument("--spec", help="spec file")
    f.add_argument("--preset", help="name of a bundled spec (see 'presets')")
    f.add_argument("--chains", type=int)
    f.add_argument("--out", default="run")
    f.add_argument("--iterations", type=int)
    f.add_argument("--burn-in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--budget", choices=sorted(BUDGETS), default="desk")
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("summarize", help="recompute the summary table of a run")
    m.add_argument("--run", required=True)
    m.add_argument("--out")
    m.set_defaults(func=cmd_summarize)

    c = sub.add_parser("compare", help="compare runs by DIC, EAIC and EBIC")
    c.add_argument("--runs", nargs="+", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("density", help="kernel density table of one parameter")
    d.add_argument("--run", required=True)
    d.add_argument("--param", required=True)
    d.add_argument("--points", type=int, default=200)
    d.add_argument("--out")
    d.set_defaults(func=cmd_density)

    r = sub.add_parser("replicate", help="t versus normal replication study")
    r.add_argument("--nu", choices=["5", "10", "50", "inf"], required=True)
    r.add_argument("--n-reps", type=int, default=20)
    r.add_argument("--budget", choices=sorted(BUDGETS), default="desk")
    r.add_argument("--m", type=int, default=50)
    r.add_argument("--chains", type=int, default=2)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="replicate")
    r.set_defaults(func=cmd_replicate)

    pr = sub.add_parser("presets", help="list bundled spec presets or print one")
    pr.add_argument("name", nargs="?")
    pr.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"betamix: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, SpecError, DomainError, OSError) as exc:
        print(f"betamix: error: {exc}", file=sys.stderr)
        return 2
    except (SamplerError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"betamix: sampler failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"betamix: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
