"""Experiment configuration: flat INI sections, one per suite, validated at load.

Every key has a type and a constraint; unknown sections and keys are
rejected, and a violated constraint is reported with the section and key
that owns it.  Seeds for the suites are derived from the master seed by a
stable hash of the suite name.
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field

from .errors import ConfigError

__all__ = ["SCHEMA", "SUITES", "ExperimentConfig", "load_config", "parse_config",
           "suite_seed", "default_config_text"]

SUITES = ("metric_lemma", "cone_corollary", "flow_smoothness", "good_expansion",
          "graph_oracle", "sigma_invariance", "covering", "resolvent")

MODELS = ("canonical", "wobbled", "deformed")


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _unit(x):
    return 0 < x < 1


def _ge1(x):
    return x >= 1


def _models(xs):
    return all(x in MODELS for x in xs)


def _suites(xs):
    return all(x in SUITES for x in xs)


def _times(xs):
    return len(xs) > 0 and all(math.isfinite(x) and x >= 0 for x in xs)


def _ptimes(xs):
    return len(xs) > 0 and all(math.isfinite(x) and x > 0 for x in xs)


# section -> key -> (type, default, check, constraint text)
SCHEMA = {
    "run": {
        "seed": (int, 0, _nonneg, ">= 0"),
        "workers": (int, 1, _ge1, ">= 1"),
        "suites": ("strs", [], _suites, f"subset of {', '.join(SUITES)}"),
        "negative_controls": (bool, False, None, ""),
        "out": (str, "reports", None, ""),
    },
    "model": {
        "kappa": (float, 0.05, lambda x: 0 < x <= 0.2, "in (0, 0.2]"),
        "wobble": (float, 0.3, lambda x: 0 <= x < 1, "in [0, 1)"),
        "K_linear": (float, 4.0, _pos, "> 0"),
        "K_deformed": (float, 2.0, _pos, "> 0"),
        "horizon": (float, 30.0, lambda x: x >= 5, ">= 5"),
    },
    "pipeline": {
        "grid": (int, 8, lambda x: x >= 4, ">= 4"),
        "field_horizon": (float, 20.0, lambda x: x >= 5, ">= 5"),
        "smoothing": (float, 0.05, lambda x: 0 < x < 0.5, "in (0, 0.5)"),
        "push": (float, 8.0, _nonneg, ">= 0"),
        "rho": (float, 0.25, _unit, "in (0, 1)"),
        "varsigma_fraction": (float, 0.9, lambda x: 0 < x <= 1, "in (0, 1]"),
        "n_points": (int, 32, _ge1, ">= 1"),
        "t_grid": ("floats", [0.0, 0.1, 0.25, 0.5, 1.0, 1.5, 2.0], _times, "times >= 0"),
        "M_leaf": (float, 1048576.0, _pos, "> 0"),
        "B_leaf": (float, 12.0, lambda x: x > 2, "> 2"),
    },
    "metric_lemma": {
        "models": ("strs", ["canonical", "wobbled"], _models, f"subset of {MODELS}"),
        "n_points": (int, 200, _ge1, ">= 1"),
        "t_max": (float, 5.0, _pos, "> 0"),
        "t_step": (float, 0.1, _pos, "> 0"),
        "slack": (float, 1e-6, _nonneg, ">= 0"),
        "sigma_inflation": (float, 1.1, lambda x: x > 1, "> 1"),
    },
    "cone_corollary": {
        "models": ("strs", ["canonical", "wobbled"], _models, f"subset of {MODELS}"),
        "n_points": (int, 200, _ge1, ">= 1"),
        "n_dir": (int, 64, lambda x: x >= 4, ">= 4"),
        "t_max": (float, 5.0, _pos, "> 0"),
        "t_step": (float, 0.1, _pos, "> 0"),
        "slack": (float, 1e-6, _nonneg, ">= 0"),
        "rho1_fraction": (float, 0.5, _unit, "in (0, 1)"),
        "aperture_inflation": (float, 4.0, lambda x: x > 1, "> 1"),
    },
    "flow_smoothness": {
        "model": (str, "wobbled", lambda x: x in MODELS, f"one of {MODELS}"),
        "smoothing": (float, 0.05, lambda x: 0 < x < 0.5, "in (0, 0.5)"),
        "seed_amplitude": (float, 0.05, _nonneg, ">= 0"),
        "n_points": (int, 32, _ge1, ">= 1"),
        "n_t": (int, 20, _ge1, ">= 1"),
        "eps_divisor": (float, 20.0, _pos, "> 0"),
        "min_reduction": (float, 2.0, _pos, "> 0"),
    },
    "good_expansion": {
        "n_points": (int, 32, _ge1, ">= 1"),
        "n_dir": (int, 64, lambda x: x >= 4, ">= 4"),
        "calibration_points": (int, 8, _ge1, ">= 1"),
        "calibration_dirs": (int, 16, lambda x: x >= 4, ">= 4"),
        "slack": (float, 1e-6, _nonneg, ">= 0"),
        "control_factor": (float, 10.0, lambda x: x > 1, "> 1"),
    },
    "graph_oracle": {
        "n_leaves": (int, 50, _ge1, ">= 1"),
        "t": (float, 0.25, _pos, "> 0"),
        "M0": (float, 2.0, _pos, "> 0"),
        "tol": (float, 1e-5, _pos, "> 0"),
        "linear_tol": (float, 1e-9, _pos, "> 0"),
        "linear_times": ("floats", [0.25, 0.5, 1.0, 2.0], _ptimes, "times > 0"),
        "linear_leaves": (int, 8, _ge1, ">= 1"),
    },
    "sigma_invariance": {
        "n_leaves": (int, 12, lambda x: x >= 2, ">= 2"),
        "n_points": (int, 1, _ge1, ">= 1"),
        "t_grid": ("floats", [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0], _ptimes,
                   "times > 0"),
        "M0": (float, 1.0, _pos, "> 0"),
        "M_start": (float, 0.25, _pos, "> 0"),
        "fit_spread": (float, 0.2, _pos, "> 0"),
    },
    "covering": {
        "t_grid": ("floats", [0.5, 1.0, 2.0], _ptimes, "times > 0"),
        "n_leaves": (int, 3, _ge1, ">= 1"),
        "rate_margin": (float, 1.1, lambda x: x >= 1, ">= 1"),
        "C_cover": (float, 80.0, _pos, "> 0"),
        "C_part": (float, 1e4, _pos, "> 0"),
        "n_partition": (int, 10001, lambda x: x >= 101, ">= 101"),
    },
    "resolvent": {
        "z": (float, 1.0, _pos, "> 0"),
        "K": (float, 1.0, _pos, "> 0"),
        "scalar_b": (float, 0.5, _nonneg, ">= 0"),
        "dim": (int, 5, _ge1, ">= 1"),
        "probe_dim": (int, 8, lambda x: x >= 2, ">= 2"),
        "m_split": (int, 6, _ge1, ">= 1"),
        "m_head": (int, 12, _ge1, ">= 1"),
        "tol": (float, 1e-8, _pos, "> 0"),
        "ratio_tol": (float, 0.1, _nonneg, ">= 0"),
    },
}


def _parse(kind, text):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "strs":
        return [s.strip() for s in text.split(",") if s.strip()]
    if kind == "floats":
        return [float(s) for s in text.split(",") if s.strip()]
    return kind(text)


def suite_seed(master, name):
    """Seed for ``name``: stable in the master seed and the suite name only."""
    h = hashlib.sha256(f"{int(master)}:{name}".encode()).digest()
    return int.from_bytes(h[:8], "little")


@dataclass
class ExperimentConfig:
    """Validated settings, ``sections[name][key]``, plus where they came from."""

    sections: dict
    source: str = "<defaults>"
    overrides: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.sections[name]

    @property
    def seed(self):
        return self.sections["run"]["seed"]

    @property
    def suites(self):
        return list(self.sections["run"]["suites"])

    def seed_for(self, suite):
        return suite_seed(self.seed, suite)

    def with_run(self, **kw):
        """Copy with ``[run]`` entries replaced (re-validated)."""
        secs = {k: dict(v) for k, v in self.sections.items()}
        for k, v in kw.items():
            if k not in SCHEMA["run"]:
                raise ConfigError(f"[run] unknown key {k!r}")
            secs["run"][k] = v
        _validate(secs)
        return ExperimentConfig(secs, self.source, {**self.overrides, **kw})

    def echo(self, *names):
        """Plain-dict copy of the named sections (parameters echoed in reports)."""
        return {n: dict(self.sections[n]) for n in names}


def _defaults():
    return {sec: {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in keys.items()}
            for sec, keys in SCHEMA.items()}


def _validate(secs):
    for sec, keys in SCHEMA.items():
        for key, (_, _, check, text) in keys.items():
            val = secs[sec][key]
            if check is not None and not check(val):
                raise ConfigError(f"[{sec}] {key} = {val!r} violates: {text}")
    sig = secs["sigma_invariance"]
    if sorted(sig["t_grid"]) != sig["t_grid"]:
        raise ConfigError("[sigma_invariance] t_grid must be increasing")
    cc = secs["cone_corollary"]
    if cc["rho1_fraction"] * cc["aperture_inflation"] <= 1:
        raise ConfigError("[cone_corollary] rho1_fraction * aperture_inflation must exceed 1 "
                          "so the control cone is wider than the calibrated aperture")
    res = secs["resolvent"]
    if res["m_split"] > res["m_head"]:
        raise ConfigError("[resolvent] m_split must not exceed m_head")


def parse_config(text, source="<string>"):
    """Parse INI text into a validated :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    secs = _defaults()
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{source}: [{sec}] unknown key {key!r}")
            kind = SCHEMA[sec][key][0]
            try:
                secs[sec][key] = _parse(kind, raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{sec}] {key}: {exc}") from exc
    _validate(secs)
    return ExperimentConfig(secs, source)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))


def default_config_text():
    """Every key with its default, in schema order."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (kind, default, _, text) in keys.items():
            if isinstance(default, list):
                val = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in default)
            elif isinstance(default, bool):
                val = "true" if default else "false"
            else:
                val = repr(default) if isinstance(default, float) else str(default)
            lines.append(f"{key} = {val}" + (f"    # {text}" if text else ""))
        lines.append("")
    return "\n".join(lines)
