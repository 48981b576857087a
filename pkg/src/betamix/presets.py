"""Ready-made spec files for the simulated-data and Prater model families.

``model-1a`` .. ``model-1e`` vary the prior of a common precision;
``model-2a`` .. ``model-2e`` vary the precision submodel on the same
location submodel.  ``prater-1.1`` .. ``prater-1.4`` and ``prater-2.1`` ..
``prater-2.6`` do the same for the gasoline-yield data.  Precision random
effects, when present, share the scale matrix and degrees of freedom of the
location random effects (``tie = true``).
"""
from __future__ import annotations

SIM_LOCATION = "logit(mu) ~ 1 + x2 + x3 + (1 + x2 | unit)"
PRATER_LOCATION = "logit(yield) ~ 1 + EP + (1 | batch)"

_SIM_PHI = {
    "model-1a": "inverse_gamma(eps=0.01)",
    "model-1b": "uniform_squared(a=50)",
    "model-1c": "scaled_beta_squared(a=50, eps=0.1)",
    "model-1d": "scaled_beta_squared(a=50, eps=0.5)",
    "model-1e": "log_t(nu=10, mu=0, sigma2=10)",
}

_SIM_PRECISION = {
    "model-2a": ("log(phi) ~ 1", False),
    "model-2b": ("log(phi) ~ 1 + (1 | unit)", True),
    "model-2c": ("log(phi) ~ 1 + x3", False),
    "model-2d": ("log(phi) ~ 1 + x2 + x3", False),
    "model-2e": ("log(phi) ~ 1 + x2 + x3 + (1 + x2 | unit)", True),
}

_PRATER_PHI = {
    "prater-1.1": "inverse_gamma(eps=0.01)",
    "prater-1.2": "uniform_squared(a=50)",
    "prater-1.3": "scaled_beta_squared(a=50, eps=0.1)",
    "prater-1.4": "scaled_beta_squared(a=50, eps=0.5)",
}

_PRATER_PRECISION = {
    "prater-2.1": ("log(phi) ~ 1", False),
    "prater-2.2": ("log(phi) ~ 1 + (1 | batch)", True),
    "prater-2.3": ("log(phi) ~ EP", False),
    "prater-2.4": ("log(phi) ~ 1 + EP", False),
    "prater-2.5": ("log(phi) ~ EP + (1 | batch)", True),
    "prater-2.6": ("log(phi) ~ 1 + EP + (1 | batch)", True),
}

DESCRIPTIONS = {
    "model-1a": "constant phi, phi ~ IG(0.01, 0.01)",
    "model-1b": "constant phi, phi = U^2, U ~ U(0, 50)",
    "model-1c": "constant phi, phi = (50 B)^2, B ~ beta(1.1, 1.1)",
    "model-1d": "constant phi, phi = (50 B)^2, B ~ beta(1.5, 1.5)",
    "model-1e": "constant phi, log(phi) ~ t(10, 0, 10)",
    "model-2a": "log(phi) = delta1",
    "model-2b": "log(phi) = delta1 + d_i1",
    "model-2c": "log(phi) = delta1 + delta3 x3",
    "model-2d": "log(phi) = delta1 + delta2 x2 + delta3 x3",
    "model-2e": "log(phi) = (delta1 + d_i1) + (delta2 + d_i2) x2 + delta3 x3",
    "prater-1.1": "Prater, constant phi ~ IG(0.01, 0.01)",
    "prater-1.2": "Prater, constant phi = U^2, U ~ U(0, 50)",
    "prater-1.3": "Prater, constant phi = (50 B)^2, B ~ beta(1.1, 1.1)",
    "prater-1.4": "Prater, constant phi = (50 B)^2, B ~ beta(1.5, 1.5)",
    "prater-2.1": "Prater, log(phi) = delta1",
    "prater-2.2": "Prater, log(phi) = delta1 + d_i1",
    "prater-2.3": "Prater, log(phi) = delta2 EP",
    "prater-2.4": "Prater, log(phi) = delta1 + delta2 EP",
    "prater-2.5": "Prater, log(phi) = d_i1 + delta2 EP",
    "prater-2.6": "Prater, log(phi) = (delta1 + d_i1) + delta2 EP",
}


def _model1(location: str, phi: str, preset: str) -> str:
    return f"[location]\nformula = {location}\n\n[priors]\npreset = {preset}\nphi_prior = {phi}\n"


def _model2(location: str, precision: str, tie: bool, preset: str) -> str:
    return (
        f"[location]\nformula = {location}\n\n[precision]\nformula = {precision}\n"
        f"tie = {'true' if tie else 'false'}\n\n[priors]\npreset = {preset}\n"
    )


PRESETS: dict[str, str] = {}
for _name, _phi in _SIM_PHI.items():
    PRESETS[_name] = _model1(SIM_LOCATION, _phi, "paper-sim")
for _name, (_f, _tie) in _SIM_PRECISION.items():
    PRESETS[_name] = _model2(SIM_LOCATION, _f, _tie, "paper-sim")
for _name, _phi in _PRATER_PHI.items():
    PRESETS[_name] = _model1(PRATER_LOCATION, _phi, "paper-prater")
for _name, (_f, _tie) in _PRATER_PRECISION.items():
    PRESETS[_name] = _model2(PRATER_LOCATION, _f, _tie, "paper-prater")


def preset_text(name: str) -> str:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None


def load_preset(name: str):
    from .specdsl import parse_spec_file

    return parse_spec_file(preset_text(name))


def load_prater():
    """The bundled 32-row gasoline-yield table."""
    from importlib.resources import files

    import pandas as pd

    with files("betamix").joinpath("data/prater.csv").open() as fh:
        return pd.read_csv(fh, comment="#")
