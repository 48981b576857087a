from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from betamix.model import DomainError
from betamix.presets import PRESETS, load_prater, load_preset
from betamix.priors import PRIOR_PRESETS, InverseGamma, ScaledBetaSquared
from betamix.specdsl import (
    FormulaAst,
    RandomBlock,
    SpecError,
    build_design,
    format_formula,
    format_spec_file,
    parse_formula,
    parse_phi_prior,
    parse_spec_file,
)


def test_location_formula_of_the_simulation_design():
    ast = parse_formula("logit(mu) ~ 1 + x2 + x3 + (1 + x2 | unit)")
    assert ast.link == "logit" and ast.target == "mu"
    assert ast.fixed_terms == ("1", "x2", "x3")
    assert ast.random_terms == (RandomBlock(("1", "x2"), "unit"),)


def test_precision_formula_without_fixed_intercept():
    ast = parse_formula("log(phi) ~ x_EP + (1 | unit)")
    assert ast.link == "log"
    assert ast.fixed_terms == ("x_EP",)
    assert ast.random_columns == ("1",) and ast.group == "unit"


def test_missing_rhs_offset():
    with pytest.raises(SpecError) as info:
        parse_formula("logit(mu) ~")
    assert info.value.offset == 12


@pytest.mark.parametrize(
    "text",
    [
        "logit(mu)",
        "probit(mu) ~ 1",
        "logit(mu) ~ 1 + 1",
        "logit(mu) ~ x + (1 | a) + (x | b)",
        "logit(mu) ~ 1 + (1 | )",
        "logit(mu ~ 1",
        "logit(mu) ~ 1 +",
        "logit(mu) ~ 1 $ x",
        "",
    ],
)
def test_syntax_errors_carry_offsets(text):
    with pytest.raises(SpecError) as info:
        parse_formula(text)
    assert info.value.offset is not None and info.value.offset >= 1


def test_offsets_are_one_based_bytes():
    with pytest.raises(SpecError) as info:
        parse_formula("logit(mu) ~ 1 + é")
    assert info.value.offset == 17
    with pytest.raises(SpecError) as info:
        parse_formula("logit(mu) ~ x + (1 | a) + (x | b)")
    assert info.value.offset == 27


def test_bytes_input():
    assert parse_formula(b"logit(y) ~ 1 + x").fixed_terms == ("1", "x")
    with pytest.raises(SpecError):
        parse_formula(b"logit(y) ~ \xff")


names = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,6}", fullmatch=True).filter(lambda s: s not in ("logit", "log"))


@st.composite
def formulas(draw):
    pool = draw(st.lists(names, min_size=1, max_size=5, unique=True))
    fixed = draw(st.lists(st.sampled_from(pool), unique=True, max_size=len(pool)))
    if draw(st.booleans()):
        fixed = ["1"] + fixed
    blocks = ()
    if draw(st.booleans()):
        rterms = draw(st.lists(st.sampled_from(["1"] + pool), min_size=1, unique=True))
        blocks = (RandomBlock(tuple(rterms), draw(names)),)
    if not fixed and not blocks:
        fixed = ["1"]
    link = draw(st.sampled_from(["logit", "log"]))
    return FormulaAst(link, draw(names), tuple(fixed), blocks)


@settings(max_examples=200, deadline=None)
@given(formulas())
def test_format_parse_round_trip(ast):
    assert parse_formula(format_formula(ast)) == ast


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet=st.sampled_from(list("logit(mu)~+1|x2 ()é$\n")), max_size=40))
def test_fuzzed_text_fails_cleanly(text):
    try:
        parse_formula(text)
    except SpecError as exc:
        assert exc.offset is None or 1 <= exc.offset <= len(text.encode()) + 1


# -- design construction ----------------------------------------------------------------


def test_random_intercept_design():
    table = pd.DataFrame({"y": [0.2, 0.3, 0.4, 0.5], "g": ["a", "b", "a", "b"], "x": [1.0, 2.0, 3.0, 4.0]})
    spec, data = build_design(parse_formula("logit(y) ~ 1 + x + (1 | g)"), table)
    assert spec.p == 2 and spec.q == 1 and data.m == 2
    assert data.unit_ids == ["a", "b"]
    for g in data.groups:
        np.testing.assert_array_equal(g.Z_rows, np.ones((2, 1)))
    np.testing.assert_array_equal(data.y, [0.2, 0.4, 0.3, 0.5])


def test_prater_design():
    spec, data = build_design(parse_formula("logit(mu) ~ 1 + EP + (1 | batch)"), load_prater(), response="yield")
    assert (data.m, data.n_obs, spec.p, spec.q) == (10, 32, 2, 1)


def test_unknown_column_lists_available():
    table = pd.DataFrame({"y": [0.2, 0.3], "x": [1.0, 2.0]})
    with pytest.raises(SpecError, match="available columns: y, x"):
        build_design(parse_formula("logit(y) ~ 1 + xx"), table)


def test_response_outside_unit_interval():
    table = pd.DataFrame({"y": [0.2, 1.0], "x": [1.0, 2.0]})
    with pytest.raises(DomainError, match="row 2"):
        build_design(parse_formula("logit(y) ~ 1 + x"), table)


def test_grouping_must_agree():
    table = pd.DataFrame({"y": [0.2, 0.3], "a": [1, 1], "b": [1, 2]})
    with pytest.raises(SpecError):
        build_design(parse_formula("logit(y) ~ 1 + (1 | a)"), table, parse_formula("log(phi) ~ 1 + (1 | b)"))


# -- spec files ------------------------------------------------------------------------------


def test_minimal_file_defaults_to_model_one():
    sf = parse_spec_file("[location]\nformula = logit(y) ~ 1 + x\n")
    assert sf.precision is None
    assert sf.catalog == PRIOR_PRESETS["paper-sim"]


def test_scaled_beta_squared_prior_line():
    sf = parse_spec_file("[location]\nformula = logit(y) ~ 1\n[priors]\nphi_prior = scaled_beta_squared(a=50, eps=0.5)\n")
    assert sf.catalog.phi_prior == ScaledBetaSquared(50.0, 0.5)
    assert parse_phi_prior("inverse_gamma(eps=0.01)") == InverseGamma(0.01)


def test_domain_error_in_prior_line_names_the_line():
    text = "[location]\nformula = logit(y) ~ 1\n\n[priors]\nphi_prior = scaled_beta_squared(a=-1, eps=0)\n"
    with pytest.raises(SpecError) as info:
        parse_spec_file(text)
    assert info.value.line == 5


@pytest.mark.parametrize(
    "text,line",
    [
        ("formula = logit(y) ~ 1\n", 1),
        ("[location]\nformula = logit(y) ~\n", 2),
        ("[location]\nformula = logit(y) ~ 1\n[sampler]\nn_iterations = ten\n", 4),
        ("[location]\nformula = logit(y) ~ 1\n[sampler]\nwarp = 9\n", 4),
        ("[location]\nformula = logit(y) ~ 1\n[nonsense]\n", 3),
        ("[location]\nformula = logit(y) ~ 1\nformula = logit(y) ~ 1\n", 3),
        ("[location]\nformula = logit(y) ~ 1\n[sampler]\nn_iterations = 100\nburn_in = 100\n", 4),
    ],
)
def test_spec_file_errors_name_lines(text, line):
    with pytest.raises(SpecError) as info:
        parse_spec_file(text)
    assert info.value.line == line


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip(name):
    sf = load_preset(name)
    again = parse_spec_file(format_spec_file(sf))
    assert again.location == sf.location and again.precision == sf.precision
    assert again.catalog == sf.catalog and again.tie == sf.tie


def test_sampler_section_round_trip():
    text = (
        "[location]\nformula = logit(y) ~ 1\n[sampler]\nn_iterations = 500\nburn_in = 100\n"
        "proposal_covariance = empirical\ninitial_step_sizes = beta=0.5, phi=2\n"
    )
    sf = parse_spec_file(text)
    cfg = sf.sampler_config()
    assert cfg.proposal_covariance == "empirical" and cfg.initial_step_sizes == {"beta": 0.5, "phi": 2.0}
    assert parse_spec_file(format_spec_file(sf)).sampler_options == sf.sampler_options


def test_prater_presets_build():
    table = load_prater()
    spec, data = load_preset("prater-2.5").build(table)
    assert spec.model2 and spec.p_star == 1 and spec.q_star == 1 and spec.tie_random_effects
    assert data.w_names == ["EP"]
