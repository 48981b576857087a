"""A small model-specification language.

Formulas
--------
::

    logit(mu) ~ 1 + x2 + x3 + (1 + x2 | unit)
    log(phi)  ~ EP + (1 | batch)

``1`` is the intercept; leaving it out drops the intercept column.  Terms are
column names; there are no interactions or transformations.  Every random
block must use the same grouping column.  Error positions are 1-based byte
offsets into the UTF-8 text (an error at end of input points one past the
last byte).

Spec files
----------
INI-like text with the sections ``[location]``, ``[precision]``, ``[priors]``
and ``[sampler]``::

    [location]
    formula = logit(mu) ~ 1 + x2 + x3 + (1 + x2 | unit)
    response = y
    random_law = t

    [precision]
    formula = log(phi) ~ 1 + (1 | unit)
    tie = true

    [priors]
    preset = paper-sim
    phi_prior = scaled_beta_squared(a=50, eps=0.5)

    [sampler]
    n_iterations = 20000

Omitted prior fields come from the ``paper-sim`` preset (or the one named by
``preset``).  Lines starting with ``#`` or ``;`` are comments.
"""
from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np
import pandas as pd

from .model import DomainError, GroupedDataset, ModelSpec
from .priors import PHI_PRIOR_NAMES, PRIOR_PRESETS, PriorCatalog
from .sampler import SamplerConfig

__all__ = [
    "SpecError",
    "FormulaAst",
    "RandomBlock",
    "parse_formula",
    "format_formula",
    "build_design",
    "SpecFile",
    "parse_spec_file",
    "format_spec_file",
    "parse_phi_prior",
]

LINKS = {"logit", "log"}
IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")


class SpecError(ValueError):
    """Syntax or validation error carrying a position."""

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        self.offset, self.line = offset, line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass(frozen=True)
class RandomBlock:
    terms: tuple
    group: str


@dataclass(frozen=True)
class FormulaAst:
    link: str
    target: str
    fixed_terms: tuple
    random_terms: tuple = ()

    @property
    def group(self) -> str | None:
        return self.random_terms[0].group if self.random_terms else None

    @property
    def random_columns(self) -> tuple:
        return tuple(t for blk in self.random_terms for t in blk.terms)


# ---------------------------------------------------------------- tokenizer


def _tokenize(text: str):
    """Yield ``(kind, value, offset)``; offsets are 1-based byte positions."""
    raw = text.encode("utf-8", errors="surrogatepass")
    i, n = 0, len(raw)
    tokens = []
    while i < n:
        c = raw[i : i + 1]
        if c.isspace():
            i += 1
            continue
        if c in b"()~+|":
            tokens.append((c.decode(), c.decode(), i + 1))
            i += 1
            continue
        if c == b"1" and not (raw[i + 1 : i + 2].isalnum() or raw[i + 1 : i + 2] in (b"_", b".")):
            tokens.append(("ONE", "1", i + 1))
            i += 1
            continue
        m = IDENT.match(raw[i:].decode("latin-1"))
        if m:
            tokens.append(("IDENT", m.group(0), i + 1))
            i += len(m.group(0))
            continue
        raise SpecError(f"unexpected character {raw[i:i + 1]!r}", offset=i + 1)
    tokens.append(("EOF", "", n + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind: str, what: str):
        tok = self.peek()
        if tok[0] != kind:
            got = "end of input" if tok[0] == "EOF" else repr(tok[1])
            raise SpecError(f"expected {what}, found {got}", offset=tok[2])
        self.pos += 1
        return tok

    def term(self):
        tok = self.peek()
        if tok[0] in ("ONE", "IDENT"):
            self.pos += 1
            return tok
        got = "end of input" if tok[0] == "EOF" else repr(tok[1])
        raise SpecError(f"expected a term ('1' or a column name), found {got}", offset=tok[2])

    def formula(self) -> FormulaAst:
        link = self.take("IDENT", "a link name")
        if link[1] not in LINKS:
            raise SpecError(f"unknown link {link[1]!r}; expected one of {sorted(LINKS)}", offset=link[2])
        self.take("(", "'('")
        target = self.take("IDENT", "a target name")[1]
        self.take(")", "')'")
        self.take("~", "'~'")
        if self.peek()[0] == "EOF":
            raise SpecError("empty right-hand side", offset=self.peek()[2])
        fixed, random, seen = [], [], set()
        while True:
            if self.peek()[0] == "(":
                start = self.peek()[2]
                block = self.random_block(seen)
                if random and block.group != random[0].group:
                    raise SpecError(
                        f"all random blocks must share one grouping column, got {random[0].group!r} and {block.group!r}",
                        offset=start,
                    )
                random.append(block)
            else:
                tok = self.term()
                self._no_dup(tok, seen, "fixed")
                fixed.append(tok[1])
            if self.peek()[0] == "+":
                self.pos += 1
                continue
            break
        tok = self.peek()
        if tok[0] != "EOF":
            raise SpecError(f"expected '+' or end of input, found {tok[1]!r}", offset=tok[2])
        return FormulaAst(link[1], target, tuple(fixed), tuple(random))

    def _no_dup(self, tok, seen, kind):
        key = (kind, tok[1])
        if key in seen:
            raise SpecError(f"duplicate {kind} term {tok[1]!r}", offset=tok[2])
        seen.add(key)

    def random_block(self, seen) -> RandomBlock:
        self.take("(", "'('")
        terms = []
        while True:
            tok = self.term()
            self._no_dup(tok, seen, "random")
            terms.append(tok[1])
            if self.peek()[0] == "+":
                self.pos += 1
                continue
            break
        self.take("|", "'|'")
        group = self.take("IDENT", "a grouping column")[1]
        self.take(")", "')'")
        return RandomBlock(tuple(terms), group)


def parse_formula(text) -> FormulaAst:
    """Parse one formula; raises :class:`SpecError` with a byte offset on failure."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SpecError("formula is not valid UTF-8", offset=exc.start + 1) from None
    if not isinstance(text, str) or not text.strip():
        raise SpecError("empty formula", offset=1)
    return _Parser(text).formula()


def format_formula(ast: FormulaAst) -> str:
    parts = list(ast.fixed_terms)
    parts += [f"({' + '.join(b.terms)} | {b.group})" for b in ast.random_terms]
    return f"{ast.link}({ast.target}) ~ {' + '.join(parts)}"


# ---------------------------------------------------------------- design


def _columns(table: pd.DataFrame, terms, n: int, what: str) -> np.ndarray:
    cols = []
    for t in terms:
        if t == "1":
            cols.append(np.ones(n))
            continue
        if t not in table.columns:
            raise SpecError(
                f"{what} term {t!r} is not a column; available columns: {', '.join(map(str, table.columns))}"
            )
        try:
            cols.append(pd.to_numeric(table[t]).to_numpy(dtype=float))
        except (ValueError, TypeError):
            raise SpecError(f"column {t!r} is not numeric") from None
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def build_design(
    location: FormulaAst,
    table,
    precision: FormulaAst | None = None,
    response: str = "y",
    group_column: str | None = None,
    re_law_b: str = "t",
    re_law_d: str = "t",
    tie: bool = False,
) -> tuple[ModelSpec, GroupedDataset]:
    """Assemble design matrices and the matching :class:`ModelSpec`.

    Rows are regrouped by the grouping column in order of first appearance.
    The response is the formula target if that names a column, otherwise
    ``response``.
    """
    table = pd.DataFrame(table).reset_index(drop=True)
    if location.link != "logit":
        raise SpecError(f"location formula needs the logit link, got {location.link!r}")
    if precision is not None and precision.link != "log":
        raise SpecError(f"precision formula needs the log link, got {precision.link!r}")
    groups = {g for g in (location.group, precision.group if precision else None, group_column) if g}
    if len(groups) > 1:
        raise SpecError(f"location and precision must share one grouping column, got {sorted(groups)}")
    group_col = groups.pop() if groups else None
    y_col = location.target if location.target in table.columns else response
    for col in [y_col] + ([group_col] if group_col else []):
        if col not in table.columns:
            raise SpecError(f"column {col!r} not found; available columns: {', '.join(map(str, table.columns))}")
    n = len(table)
    if n == 0:
        raise SpecError("data table has no rows")
    try:
        y = pd.to_numeric(table[y_col]).to_numpy(dtype=float)
    except (ValueError, TypeError):
        raise SpecError(f"response column {y_col!r} is not numeric") from None
    bad = np.flatnonzero(~((y > 0) & (y < 1)))
    if bad.size:
        raise DomainError(f"response {y_col!r} at data row {bad[0] + 1} is {y[bad[0]]!r}; responses must lie in (0, 1)")
    if group_col:
        codes, uniques = pd.factorize(table[group_col], sort=False)
        if np.any(codes < 0):
            raise SpecError(f"grouping column {group_col!r} has missing values")
        unit_ids = [u.item() if hasattr(u, "item") else u for u in uniques]
    else:
        codes, unit_ids = np.arange(n), list(range(1, n + 1))
    order = np.argsort(codes, kind="stable")
    t = table.iloc[order].reset_index(drop=True)
    codes = np.asarray(codes)[order]
    X = _columns(t, location.fixed_terms, n, "location")
    Z = _columns(t, location.random_columns, n, "location random")
    W = H = None
    if precision is not None:
        W = _columns(t, precision.fixed_terms, n, "precision")
        H = _columns(t, precision.random_columns, n, "precision random")
    data = GroupedDataset(
        y=y[order],
        X=X,
        group=codes,
        unit_ids=unit_ids,
        Z=Z,
        W=W,
        H=H,
        x_names=list(location.fixed_terms),
        z_names=list(location.random_columns),
        w_names=list(precision.fixed_terms) if precision else [],
        h_names=list(precision.random_columns) if precision else [],
    )
    spec = ModelSpec(
        p=X.shape[1],
        q=Z.shape[1],
        precision="regression" if precision is not None else "constant",
        p_star=W.shape[1] if W is not None else 0,
        q_star=H.shape[1] if H is not None else 0,
        re_law_b=re_law_b,
        re_law_d=re_law_d,
        tie_random_effects=tie and precision is not None and bool(precision.random_terms),
    )
    return spec, data


# ---------------------------------------------------------------- spec files


SECTIONS = {
    "location": {"formula", "response", "random_law"},
    "precision": {"formula", "random_law", "tie"},
    "priors": {f.name for f in fields(PriorCatalog)} | {"preset"},
    "sampler": {f.name for f in fields(SamplerConfig)} - {"use_likelihood", "fixed", "n_jobs", "jitter"},
}
_INT_KEYS = {"n_iterations", "burn_in", "thin", "n_chains", "seed", "adapt_window"}
_PHI_CALL = re.compile(r"^\s*([A-Za-z_]+)\s*\((.*)\)\s*$")


def parse_phi_prior(text: str):
    """``scaled_beta_squared(a=50, eps=0.5)`` to a prior object."""
    m = _PHI_CALL.match(text)
    if not m:
        name, body = text.strip(), ""
    else:
        name, body = m.group(1), m.group(2)
    if name not in PHI_PRIOR_NAMES:
        raise ValueError(f"unknown phi prior {name!r}; choose from {', '.join(PHI_PRIOR_NAMES)}")
    kwargs = {}
    for part in filter(None, (p.strip() for p in body.split(","))):
        if "=" not in part:
            raise ValueError(f"phi prior arguments must be key=value, got {part!r}")
        k, v = (s.strip() for s in part.split("=", 1))
        kwargs[k] = float(v)
    try:
        return PHI_PRIOR_NAMES[name](**kwargs)
    except TypeError:
        raise ValueError(f"bad arguments for {name}: {sorted(kwargs)}") from None


def format_phi_prior(prior) -> str:
    name = {v: k for k, v in PHI_PRIOR_NAMES.items()}[type(prior)]
    args = ", ".join(f"{f.name}={getattr(prior, f.name):g}" for f in fields(prior))
    return f"{name}({args})"


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {v!r}")


def _parse_value(key: str, v: str):
    if key in _INT_KEYS:
        try:
            return int(v)
        except ValueError:
            raise ValueError(f"malformed integer {v!r}") from None
    if key in ("beta_family", "delta_family", "proposal_covariance"):
        return v.strip()
    if key == "nu_truncate":
        return _parse_bool(v)
    if key == "phi_prior":
        return parse_phi_prior(v)
    if key == "initial_step_sizes":
        out = {}
        for part in filter(None, (p.strip() for p in v.split(","))):
            k, _, val = part.partition("=")
            out[k.strip()] = float(val)
        return out
    try:
        val = json.loads(v)
    except json.JSONDecodeError:
        raise ValueError(f"malformed number {v!r}") from None
    if isinstance(val, bool) or not isinstance(val, (int, float, list)):
        raise ValueError(f"malformed number {v!r}")
    return val


@dataclass
class SpecFile:
    location: FormulaAst
    precision: FormulaAst | None = None
    response: str = "y"
    re_law_b: str = "t"
    re_law_d: str = "t"
    tie: bool = False
    catalog: PriorCatalog = field(default_factory=lambda: PRIOR_PRESETS["paper-sim"])
    prior_preset: str = "paper-sim"
    prior_overrides: dict = field(default_factory=dict)
    sampler_options: dict = field(default_factory=dict)

    def sampler_config(self, **overrides) -> SamplerConfig:
        opts = {**self.sampler_options, **{k: v for k, v in overrides.items() if v is not None}}
        return SamplerConfig(**opts)

    def build(self, table) -> tuple[ModelSpec, GroupedDataset]:
        return build_design(
            self.location,
            table,
            self.precision,
            response=self.response,
            re_law_b=self.re_law_b,
            re_law_d=self.re_law_d,
            tie=self.tie,
        )


def parse_spec_file(text: str) -> SpecFile:
    """Parse spec-file text; every error names its line."""
    section = None
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    lines: dict[tuple, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise SpecError("malformed section header", line=lineno)
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise SpecError(f"unknown section [{section}]; expected one of {sorted(SECTIONS)}", line=lineno)
            continue
        if section is None:
            raise SpecError("key outside of any section", line=lineno)
        if "=" not in line:
            raise SpecError("expected 'key = value'", line=lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SECTIONS[section]:
            raise SpecError(f"unknown key {key!r} in [{section}]", line=lineno)
        if key in values[section]:
            raise SpecError(f"duplicate key {key!r} in [{section}]", line=lineno)
        values[section][key] = val
        lines[(section, key)] = lineno

    def err(sec, key, exc):
        return SpecError(str(exc), line=lines.get((sec, key)))

    loc = values["location"]
    if "formula" not in loc:
        raise SpecError("missing [location] formula")
    try:
        location = parse_formula(loc["formula"])
    except SpecError as exc:
        raise SpecError(f"location formula: {exc}", line=lines[("location", "formula")]) from None
    out = SpecFile(location=location, response=loc.get("response", "y"))
    if "random_law" in loc:
        out.re_law_b = loc["random_law"]
        if out.re_law_b not in ("t", "normal"):
            raise SpecError(f"random_law must be 't' or 'normal', got {out.re_law_b!r}", line=lines[("location", "random_law")])
    prec = values["precision"]
    if prec:
        if "formula" not in prec:
            raise SpecError("[precision] needs a formula", line=min(lines[("precision", k)] for k in prec))
        try:
            out.precision = parse_formula(prec["formula"])
        except SpecError as exc:
            raise SpecError(f"precision formula: {exc}", line=lines[("precision", "formula")]) from None
        if "random_law" in prec:
            out.re_law_d = prec["random_law"]
            if out.re_law_d not in ("t", "normal"):
                raise SpecError("random_law must be 't' or 'normal'", line=lines[("precision", "random_law")])
        if "tie" in prec:
            try:
                out.tie = _parse_bool(prec["tie"])
            except ValueError as exc:
                raise err("precision", "tie", exc) from None
    pri = dict(values["priors"])
    preset = pri.pop("preset", "paper-sim")
    if preset not in PRIOR_PRESETS:
        raise SpecError(f"unknown prior preset {preset!r}; choose from {sorted(PRIOR_PRESETS)}", line=lines[("priors", "preset")])
    overrides = {}
    for key, val in pri.items():
        try:
            overrides[key] = _parse_value(key, val)
        except ValueError as exc:
            raise err("priors", key, exc) from None
    try:
        out.catalog = replace(PRIOR_PRESETS[preset], **overrides)
    except (ValueError, TypeError) as exc:
        raise SpecError(f"invalid prior settings: {exc}", line=min((lines[("priors", k)] for k in overrides), default=None)) from None
    out.prior_preset, out.prior_overrides = preset, overrides
    samp = {}
    for key, val in values["sampler"].items():
        try:
            samp[key] = _parse_value(key, val)
        except ValueError as exc:
            raise err("sampler", key, exc) from None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            SamplerConfig(**samp)
    except (ValueError, TypeError) as exc:
        raise SpecError(f"invalid sampler settings: {exc}", line=min((lines[("sampler", k)] for k in samp), default=None)) from None
    out.sampler_options = samp
    return out


def _format_value(v) -> str:
    if hasattr(v, "__dataclass_fields__"):
        return format_phi_prior(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, dict):
        return ", ".join(f"{k}={x:g}" for k, x in v.items())
    if isinstance(v, (list, tuple, np.ndarray)):
        return json.dumps(np.asarray(v).tolist())
    return str(v)


def format_spec_file(spec: SpecFile) -> str:
    lines = ["[location]", f"formula = {format_formula(spec.location)}", f"response = {spec.response}", f"random_law = {spec.re_law_b}"]
    if spec.precision is not None:
        lines += ["", "[precision]", f"formula = {format_formula(spec.precision)}", f"random_law = {spec.re_law_d}", f"tie = {_format_value(spec.tie)}"]
    lines += ["", "[priors]", f"preset = {spec.prior_preset}"]
    lines += [f"{k} = {_format_value(v)}" for k, v in spec.prior_overrides.items()]
    if spec.sampler_options:
        lines += ["", "[sampler]"] + [f"{k} = {_format_value(v)}" for k, v in spec.sampler_options.items()]
    return "\n".join(lines) + "\n"
