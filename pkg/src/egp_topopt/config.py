"""INI run configuration.

A config file picks one of the benchmark geometries and overrides any of its
settings::

    [problem]
    preset = mbb            ; mbb | inverter | cantilever3d
    nx = 120
    ny = 40
    volume_fraction = 0.45
    method = egp            ; egp | oc

    [material]
    penalization = 3.0

    [filters]
    density_radius = 1.1
    sensitivity_kind = gaussian

    [optimizer]
    delta = 0.3             ; sets delta_upper and delta_lower together
    clip_multiplier = 5

    [baseline_filters]
    density_radius = 2.4

Settings are resolved as command line > config file > preset.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import re
from pathlib import Path

from .model import PRESETS, ProblemDefinition


class ConfigError(ValueError):
    """A config file that cannot be read, parsed or validated."""


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(*options):
    def parse(text):
        value = text.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return value
    return parse


_FILTER_FIELDS = {
    "density_radius": float,
    "sensitivity_radius": float,
    "density_kind": _choice("gaussian", "hat", "none"),
    "sensitivity_kind": _choice("gaussian", "hat", "close", "none"),
    "sigma_ratio": float,
    "truncation_ratio": float,
    "close_composite": _bool,
}

SCHEMA = {
    "problem": {
        "preset": _choice(*PRESETS),
        "name": str,
        "nx": int,
        "ny": int,
        "nz": int,
        "volume_fraction": float,
        "method": _choice("egp", "oc"),
    },
    "material": {
        "young_modulus_solid": float,
        "young_modulus_void": float,
        "poisson_ratio": float,
        "penalization": float,
    },
    "filters": _FILTER_FIELDS,
    "baseline_filters": _FILTER_FIELDS,
    "optimizer": {
        "clip_multiplier": float,
        "delta": float,
        "delta_upper": float,
        "delta_lower": float,
        "max_iter": int,
        "tol": float,
        "clip_before_filter": _bool,
        "move_limit": float,
        "oc_damping": float,
    },
}


def _line_of(lines, section, key=None):
    current = None
    for number, line in enumerate(lines, start=1):
        stripped = line.strip()
        header = re.match(r"\[(.+)\]$", stripped)
        if header:
            current = header.group(1).strip()
            if key is None and current == section:
                return number
        elif current == section and key is not None:
            name = re.split(r"[=:]", stripped, maxsplit=1)[0].strip().lower()
            if name == key:
                return number
    return None


def _fail(path, lines, section, key, message):
    number = _line_of(lines, section, key)
    where = f"{path}:{number}" if number else str(path)
    field = f"[{section}] {key}" if key else f"[{section}]"
    raise ConfigError(f"{where}: {field}: {message}")


def parse_config_text(text: str, path="<config>") -> dict:
    """Parse INI text into ``{section: {key: value}}`` with typed values."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                       interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from None
    lines = text.splitlines()
    result = {}
    for section in parser.sections():
        if section not in SCHEMA:
            _fail(path, lines, section, None,
                  f"unknown section (expected one of {', '.join(SCHEMA)})")
        fields = SCHEMA[section]
        values = {}
        for key, raw in parser.items(section):
            if key not in fields:
                _fail(path, lines, section, key, "unknown field")
            try:
                values[key] = fields[key](raw.strip())
            except ValueError as exc:
                _fail(path, lines, section, key, str(exc))
        if "delta" in values:
            delta = values.pop("delta")
            values.setdefault("delta_upper", delta)
            values.setdefault("delta_lower", delta)
        result[section] = values
    return result


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config_text(text, path)


def merge(*layers: dict) -> dict:
    """Combine override layers; later layers win field by field."""
    merged = {}
    for layer in layers:
        for section, values in layer.items():
            merged.setdefault(section, {}).update(
                {k: v for k, v in values.items() if v is not None})
    return merged


def build_problem(preset: str, overrides: dict) -> ProblemDefinition:
    """Instantiate ``preset`` at the requested size and apply ``overrides``."""
    factory = PRESETS[preset]
    section = overrides.get("problem", {})
    sizes = {k: section[k] for k in ("nx", "ny", "nz") if k in section}
    if "nz" in sizes and preset != "cantilever3d":
        raise ConfigError(f"nz applies to the 3D preset only, not {preset}")
    problem = factory(**sizes)

    changes = {}
    if "volume_fraction" in section:
        changes["volume_fraction"] = section["volume_fraction"]
    if "name" in section:
        changes["name"] = section["name"]
    if overrides.get("material"):
        changes["material"] = dataclasses.replace(problem.material, **overrides["material"])
    if overrides.get("filters"):
        changes["filter_config"] = dataclasses.replace(problem.filter_config,
                                                       **overrides["filters"])
    if overrides.get("baseline_filters"):
        changes["baseline_filter_config"] = dataclasses.replace(
            problem.baseline_filter_config, **overrides["baseline_filters"])
    opt = dict(overrides.get("optimizer", {}))
    delta = opt.pop("delta", None)
    if delta is not None:
        opt.setdefault("delta_upper", delta)
        opt.setdefault("delta_lower", delta)
    if opt:
        changes["optimizer_config"] = dataclasses.replace(problem.optimizer_config, **opt)
    return problem.replace(**changes) if changes else problem


def describe(problem: ProblemDefinition, method: str) -> str:
    """INI text echoing every resolved setting of a run."""
    parser = configparser.ConfigParser(interpolation=None)
    grid = problem.grid
    parser["problem"] = {"name": problem.name, "method": method,
                         "objective": problem.objective_kind.value,
                         "nx": grid.nx, "ny": grid.ny, "nz": grid.nz,
                         "volume_fraction": repr(problem.volume_fraction)}
    for section, obj in (("material", problem.material),
                         ("filters", problem.filter_config),
                         ("baseline_filters", problem.baseline_filter_config),
                         ("optimizer", problem.optimizer_config)):
        parser[section] = {f.name: repr(getattr(obj, f.name)) if isinstance(getattr(obj, f.name), float)
                           else str(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()
