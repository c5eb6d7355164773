"""Flat ``key = value`` config files (INI sections) for bench, recover and theory runs.

Layout::

    [plan]                 # ExperimentPlan fields
    scenario = heavy_tailed
    m_grid = 100, 200, 300

    [algorithm:erm]        # one section per RecoveryConfig template
    algorithm = erm
    step_size = 0.01

    [theory]               # theory-suite settings (see THEORY_DEFAULTS)
    trials = 100

Unknown keys and unparsable values raise :class:`ConfigError` naming the key.
"""

import configparser
import dataclasses

from .experiments import ExperimentPlan
from .recovery import RecoveryConfig
from .sensing import parse_ensemble


class ConfigError(ValueError):
    pass


def _parse_bool(text):
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    return [int(t) for t in str(text).replace(",", " ").split()]


def _float_list(text):
    return [float(t) for t in str(text).replace(",", " ").split()]


def _pairs(text):
    out = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        a, _, b = item.partition("/")
        out.append((parse_ensemble(a), parse_ensemble(b or a)))
    return out


def _field_parser(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


RECOVERY_FIELDS = {
    f.name: _field_parser(f.default) for f in dataclasses.fields(RecoveryConfig)
}

PLAN_FIELDS = {
    "scenario": str,
    "m_grid": _int_list,
    "trials": int,
    "master_seed": int,
    "sigma": float,
    "epsilon": float,
    "generator_dims": _int_list,
    "generator_seed": int,
    "generator_scale": float,
    "final_relu": _parse_bool,
    "generator_file": str,
    "latent_scale": float,
    "validation_m": int,
    "val_batches": int,
    "out": str,
}

THEORY_DEFAULTS = {
    "seed": ("0", int),
    "trials": ("100", int),
    "calibration_trials": ("50", int),
    "M": ("100", int),
    "b": ("8", int),
    "n": ("100", int),
    "k": ("5", int),
    "hidden": ("50", int),
    "sigma": ("1.0", float),
    "direction_samples": ("100", int),
    "gamma": ("0.5", float),
    "batch_fraction": ("0.9", float),
    "target_rate": ("0.95", float),
    "objective_M": ("20", int),
    "objective_b": ("10", int),
    "objective_trials": ("200", int),
    "ensembles": ("gaussian/gaussian, student_t(4)/student_t(3)", _pairs),
    "calibrate": ("true", _parse_bool),
    "gamma_grid": ("0.7, 0.6, 0.5, 0.4, 0.3, 0.2", _float_list),
    "b_grid": ("4, 8, 16, 32", _int_list),
}


def _convert(section, key, raw, parser):
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] bad value for key {key!r}: {raw!r} ({exc})") from None


def _check_keys(section, items, allowed):
    for key in items:
        if key not in allowed:
            raise ConfigError(f"[{section}] unknown key {key!r}")


def read_ini(path):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cp


def recovery_config_from(section, items, overrides=None):
    items = dict(items)
    items.update(overrides or {})
    _check_keys(section, items, RECOVERY_FIELDS)
    kwargs = {k: _convert(section, k, v, RECOVERY_FIELDS[k]) for k, v in items.items()}
    try:
        return RecoveryConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def plan_from_ini(cp, plan_overrides=None, algo_overrides=None):
    """Build an :class:`ExperimentPlan`; overrides are raw strings keyed by field."""
    raw = dict(cp["plan"]) if cp.has_section("plan") else {}
    raw.update(plan_overrides or {})
    _check_keys("plan", raw, PLAN_FIELDS)
    kwargs = {k: _convert("plan", k, v, PLAN_FIELDS[k]) for k, v in raw.items()}
    algorithms = {}
    for name in cp.sections():
        if name == "plan":
            continue
        if not name.startswith("algorithm:"):
            raise ConfigError(f"unknown section [{name}]")
        label = name.split(":", 1)[1].strip()
        algorithms[label] = recovery_config_from(name, cp[name], algo_overrides)
    if algorithms:
        kwargs["algorithms"] = algorithms
    plan = ExperimentPlan(**kwargs)
    try:
        return plan.validate()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def theory_settings(cp, overrides=None):
    raw = dict(cp["theory"]) if cp.has_section("theory") else {}
    for name in cp.sections():
        if name != "theory":
            raise ConfigError(f"unknown section [{name}]")
    raw.update(overrides or {})
    _check_keys("theory", raw, THEORY_DEFAULTS)
    out = {k: _convert("theory", k, d, p) for k, (d, p) in THEORY_DEFAULTS.items()}
    out.update({k: _convert("theory", k, v, THEORY_DEFAULTS[k][1]) for k, v in raw.items()})
    return out
