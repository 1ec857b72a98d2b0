"""
Experiment configuration files.

The format is INI: ``[section]`` headers followed by ``key = value`` lines.
Values are Python literals (numbers, quoted strings, lists), or bare words
which are read as strings. ``#`` and ``;`` start comment lines. Every key
is validated against :data:`SCHEMA`; unknown keys are errors.

Example::

    [experiment]
    kind = fig5_gap
    seed = 1
    policies = ["NR@SE", "R-NBE@NBE", "R-SE@SE"]

    [sweep]
    points = [-20, -15, -10, -5, 0]
"""
from dataclasses import dataclass, field, replace
import ast
import configparser
import hashlib
import math
import re

from .channel import SystemDims

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "EXPERIMENT_KINDS",
    "SCHEMA",
    "load_config",
    "parse_config_text",
    "validate_config_text",
    "apply_override",
]

EXPERIMENT_KINDS = ("fig3_ber", "fig4_mse", "fig5_gap", "fig6_an", "fig7_threshold", "fig8_system", "custom")


class ConfigError(ValueError):
    """Invalid configuration; ``issues`` lists every problem found."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _num_list(v):
    return isinstance(v, (list, tuple)) and all(_num(x) for x in v)


def _str_list(v):
    return isinstance(v, (list, tuple)) and all(isinstance(x, str) for x in v)


# section -> key -> (type check, description, default)
SCHEMA = {
    "experiment": {
        "kind": (lambda v: v in EXPERIMENT_KINDS, f"one of {', '.join(EXPERIMENT_KINDS)}", "custom"),
        "seed": (_int, "integer", 0),
        "policies": (_str_list, "list of DESIGN@EVAL labels", []),
        "name": (lambda v: isinstance(v, str), "string", ""),
    },
    "dims": {
        "K_T": (_int, "integer", 4),
        "K_R": (_int, "integer", 8),
        "K_E": (_int, "integer", 2),
        "N_T": (_int, "integer", 16),
        "N_R": (_int, "integer", 8),
        "N_E": (_int, "integer", 4),
        "N_s": (_int, "integer", 2),
        "P_T": (_num, "number", 1.0),
        "sigma_zt2": (_num, "number (AN variance)", 0.09),
        "Gamma": (_num, "number", 0.5),
    },
    "errors": {
        "sigma_tl2": (_num, "number", 0.04),
        "sigma_te2": (_num, "number", 0.09),
        "tau_tl": (_num, "number", 0.04),
        "tau_te": (_num, "number", 0.09),
    },
    "design": {
        "beta": (_num, "number", 1e-4),
        "max_outer_iters": (_int, "integer", 50),
        "nbe_max_outer_iters": (_int, "integer", 30),
        "init": (lambda v: v in ("eigen", "random"), "eigen or random", "eigen"),
    },
    "sweep": {
        "points": (_num_list, "list of SNR values in dB", [0.0]),
        "trials_per_point": (_int, "integer", 10),
        "symbols_per_trial": (_int, "integer", 1000),
        "error_draws": (_int, "integer", 4),
    },
    "gap": {
        "target_legit": (_num, "number", 1e-4),
        "target_eve": (_num, "number", 0.3),
    },
    "an": {
        "variances": (_num_list, "list of AN variances", [0.0, 0.04, 0.09]),
    },
    "threshold": {
        "gammas": (_num_list, "list of eavesdropper MSE thresholds", [0.1, 0.3, 0.5, 0.7, 0.9]),
        "snr_db": (_num, "number", -10.0),
    },
    "system": {
        "policies": (_str_list, "list of MBSFN, Greedy, SCPTM", ["MBSFN", "Greedy", "SCPTM"]),
        "n_groups": (_int, "integer", 30),
        "K_prime": (_int, "integer", 10),
        "n_bs": (_int, "integer", 100),
        "area_km2": (_num, "number", 10.0),
        "sync_size": (_int, "integer", 20),
        "n_members": (_int, "integer", 9),
        "n_eves": (_int, "integer", 2),
        "radius_m": (_num, "number", 500.0),
        "carrier_freq": (_num, "number (Hz)", 700e6),
        "h_bs_m": (_num, "number", 30.0),
        "h_ue_m": (_num, "number", 1.5),
        "tx_power_dbm": (_num, "number", 46.0),
        "bandwidth_hz": (_num, "number", 10e6),
        "noise_figure_db": (_num, "number", 9.0),
        "an_var": (_num, "number", 0.04),
        "symbols_per_group": (_int, "integer", 2000),
        "error_draws": (_int, "integer", 2),
    },
}


@dataclass
class ExperimentConfig:
    """Fully resolved configuration: every schema key has a value."""

    values: dict = field(default_factory=dict)
    source: str = ""

    def __getitem__(self, key):
        section, name = key.split(".", 1)
        return self.values[section][name]

    @property
    def kind(self):
        return self.values["experiment"]["kind"]

    @property
    def seed(self):
        return self.values["experiment"]["seed"]

    def dims(self):
        d = self.values["dims"]
        return SystemDims(K_T=d["K_T"], K_R=d["K_R"], K_E=d["K_E"], N_T=d["N_T"], N_R=d["N_R"],
                          N_E=d["N_E"], N_s=d["N_s"], P_T=float(d["P_T"]),
                          sigma_zt=math.sqrt(max(float(d["sigma_zt2"]), 0.0)), Gamma=float(d["Gamma"]))

    def with_seed(self, seed):
        vals = {s: dict(kv) for s, kv in self.values.items()}
        vals["experiment"]["seed"] = int(seed)
        return replace(self, values=vals)

    def to_text(self):
        """Canonical INI text of the resolved configuration."""
        lines = []
        for section in SCHEMA:
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                lines.append(f"{key} = {_literal(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _literal(v):
    if isinstance(v, str):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_literal(x) for x in v) + "]"
    return repr(v)


_WORD = re.compile(r"^[A-Za-z_][A-Za-z0-9_@\-.]*$")


def _parse_value(raw):
    raw = raw.strip()
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        if _WORD.match(raw):
            return raw
        raise


def _key_lines(text):
    """Line number of each ``(section, key)`` for diagnostics."""
    where, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif "=" in s and not s.startswith(("#", ";")) and section is not None:
            where[(section, s.split("=", 1)[0].strip())] = i
    return where


def _check_value(section, key, value, loc):
    check, desc, _ = SCHEMA[section][key]
    if not check(value):
        return [f"{loc}: {section}.{key} = {value!r} must be {desc}"]
    return []


def _semantic_issues(values):
    issues = []
    d = values["dims"]
    try:
        dims = SystemDims(K_T=d["K_T"], K_R=d["K_R"], K_E=d["K_E"], N_T=d["N_T"], N_R=d["N_R"],
                          N_E=d["N_E"], N_s=d["N_s"], P_T=float(d["P_T"]),
                          sigma_zt=math.sqrt(max(float(d["sigma_zt2"]), 0.0)), Gamma=float(d["Gamma"]))
        issues += [f"dims: {p}" for p in dims.problems()]
    except (TypeError, ValueError) as exc:
        issues.append(f"dims: {exc}")
    if d["sigma_zt2"] < 0:
        issues.append("dims.sigma_zt2 must be >= 0")
    for k, v in values["errors"].items():
        if v < 0:
            issues.append(f"errors.{k} must be >= 0")
    des = values["design"]
    if not des["beta"] > 0:
        issues.append("design.beta must be positive")
    for k in ("max_outer_iters", "nbe_max_outer_iters"):
        if des[k] < 1:
            issues.append(f"design.{k} must be >= 1")
    sw = values["sweep"]
    pts = list(sw["points"])
    if not pts:
        issues.append("sweep.points must not be empty")
    if any(b < a for a, b in zip(pts, pts[1:])):
        issues.append("sweep.points must be sorted ascending")
    if sw["trials_per_point"] < 1:
        issues.append("sweep.trials_per_point must be >= 1")
    if sw["error_draws"] < 1:
        issues.append("sweep.error_draws must be >= 1")
    if sw["symbols_per_trial"] < 0:
        issues.append("sweep.symbols_per_trial must be >= 0")
    from .simkit import parse_policy

    for p in values["experiment"]["policies"]:
        try:
            parse_policy(p)
        except ValueError as exc:
            issues.append(f"experiment.policies: {exc}")
    kind = values["experiment"]["kind"]
    if kind == "fig5_gap" and len(pts) < 2:
        issues.append("fig5_gap needs at least two sweep points")
    g = values["gap"]
    if not 0 < g["target_legit"] < 0.5 or not 0 < g["target_eve"] < 0.5:
        issues.append("gap targets must lie in (0, 0.5)")
    for v in values["an"]["variances"]:
        if not 0 <= v < d["P_T"]:
            issues.append(f"an.variances: {v} must lie in [0, P_T)")
    for gm in values["threshold"]["gammas"]:
        if not 0 < gm <= d["N_s"]:
            issues.append(f"threshold.gammas: {gm} must lie in (0, N_s] since eavesdropper MSE cannot exceed tr(I) = N_s")
    sysv = values["system"]
    for p in sysv["policies"]:
        if p not in ("MBSFN", "Greedy", "SCPTM"):
            issues.append(f"system.policies: unknown clustering policy {p!r}")
    for k in ("n_groups", "K_prime", "n_bs", "sync_size", "n_members", "n_eves", "error_draws"):
        if sysv[k] < 1:
            issues.append(f"system.{k} must be >= 1")
    if sysv["sync_size"] > sysv["n_bs"]:
        issues.append("system.sync_size exceeds system.n_bs")
    if sysv["K_prime"] > sysv["sync_size"]:
        issues.append("system.K_prime exceeds system.sync_size")
    for k in ("area_km2", "radius_m", "carrier_freq", "h_bs_m", "h_ue_m", "bandwidth_hz"):
        if not sysv[k] > 0:
            issues.append(f"system.{k} must be positive")
    if not 0 <= sysv["an_var"] < 1:
        issues.append("system.an_var must lie in [0, 1)")
    return issues


def _collect(text, source):
    """Parse and check; returns ``(values, issues)``."""
    issues = []
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        return None, [f"{source}: {exc}".replace("\n", " ")]
    lines = _key_lines(text)
    values = {s: {k: _copy(spec[2]) for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    for section in parser.sections():
        sec_line = next((i for i, ln in enumerate(text.splitlines(), 1) if ln.strip() == f"[{section}]"), 0)
        if section not in SCHEMA:
            issues.append(f"{source}:{sec_line}: unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            loc = f"{source}:{lines.get((section, key), sec_line)}"
            if key not in SCHEMA[section]:
                issues.append(f"{loc}: unknown key {section}.{key}")
                continue
            try:
                value = _parse_value(raw)
            except (ValueError, SyntaxError):
                issues.append(f"{loc}: {section}.{key}: cannot parse {raw!r}")
                continue
            if isinstance(value, tuple):
                value = list(value)
            bad = _check_value(section, key, value, loc)
            if bad:
                issues += bad
                continue
            values[section][key] = value
    return values, issues


def _copy(v):
    return list(v) if isinstance(v, list) else v


def parse_config_text(text, source="<config>"):
    """Parse and validate; raises :class:`ConfigError` listing every issue."""
    values, issues = _collect(text, source)
    if values is not None and not issues:
        issues = _semantic_issues(values)
    if issues:
        raise ConfigError(issues)
    return ExperimentConfig(values, source)


def validate_config_text(text, source="<config>"):
    """List of every issue found, empty when the configuration is valid."""
    values, issues = _collect(text, source)
    if values is None:
        return issues
    return issues + _semantic_issues(values)


def load_config(path):
    """Read and validate a configuration file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config file {path}: {exc.strerror}"]) from None
    return parse_config_text(text, str(path))


def apply_override(text, assignment):
    """
    Apply ``section.key=value`` to configuration text.

    The key is replaced in place when present, otherwise appended to its
    section (created if needed).
    """
    if "=" not in assignment or "." not in assignment.split("=", 1)[0]:
        raise ConfigError([f"override {assignment!r} must look like section.key=value"])
    lhs, value = assignment.split("=", 1)
    section, key = (s.strip() for s in lhs.split(".", 1))
    value = value.strip()
    out, current, done = [], None, False
    lines = text.splitlines()
    for i, line in enumerate(lines):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            if current == section and not done:
                out.append(f"{key} = {value}")
                done = True
            current = s[1:-1].strip()
        elif current == section and "=" in s and s.split("=", 1)[0].strip() == key and not done:
            out.append(f"{key} = {value}")
            done = True
            continue
        out.append(line)
    if not done:
        if current != section:
            out.append(f"[{section}]")
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"
