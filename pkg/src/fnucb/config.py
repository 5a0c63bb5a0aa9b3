"""Flat TOML experiment configs and grid expansion.

A config is a single flat table. ``schema_version`` is required, every other
key is a ``RunConfig`` field or one of the sweep axes ``sweep_N``,
``sweep_D``, ``sweep_policy`` and ``sweep_seed`` (lists). Unknown keys and
type mismatches are errors reported with their line number::

    schema_version = 1
    env = "cosine"
    T = 2000
    alpha_mode = "ramp"
    sweep_N = [1, 2, 4]
    sweep_seed = [0, 1, 2]
"""

from __future__ import annotations

import dataclasses
import itertools
import math
import re
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .harness import RunConfig

SCHEMA_VERSION = 1
SWEEP_AXES = {"sweep_policy": "policy", "sweep_N": "N", "sweep_D": "D", "sweep_seed": "seed"}


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.source = source
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


def _field_types() -> dict:
    hints = typing.get_type_hints(RunConfig)
    return {f.name: hints[f.name] for f in dataclasses.fields(RunConfig)}


FIELD_TYPES = _field_types()


def _key_line(text: str, key: str) -> int | None:
    k = re.escape(key)
    pat = re.compile(rf"^\s*(?:(?:{k}|\"{k}\")\s*=|\[\s*{k}\s*\])")
    for n, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return n
    return None


def _coerce(name: str, value, tp):
    """Check ``value`` against the annotated type, allowing int -> float."""
    args = typing.get_args(tp)
    optional = type(None) in args
    base = next((a for a in args if a is not type(None)), tp) if args else tp
    if value is None:
        if optional:
            return None
        raise TypeError(f"{name} may not be null")
    if base is bool:
        if not isinstance(value, bool):
            raise TypeError(f"{name} must be a boolean")
        return value
    if base is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"{name} must be an integer")
        return value
    if base is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{name} must be a number")
        return float(value)
    if base is str:
        if not isinstance(value, str):
            raise TypeError(f"{name} must be a string")
        return value
    raise TypeError(f"{name}: unsupported type {tp}")


@dataclass
class ExperimentConfig:
    base: dict
    sweeps: dict = field(default_factory=dict)
    source: str = "<config>"

    def base_config(self) -> RunConfig:
        return RunConfig(**self.base)

    def cells(self) -> list[tuple[str, RunConfig]]:
        return expand_grid(self)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}", source) from None

    if "schema_version" not in raw:
        raise ConfigError("missing schema_version", source, 1)
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {raw['schema_version']!r} (expected {SCHEMA_VERSION})",
                          source, _key_line(text, "schema_version"))

    base, sweeps = {}, {}
    for key, value in raw.items():
        if key == "schema_version":
            continue
        line = _key_line(text, key)
        if isinstance(value, dict):
            raise ConfigError(f"tables are not allowed ([{key}]); the config is flat", source, line)
        try:
            if key in SWEEP_AXES:
                target = SWEEP_AXES[key]
                if not isinstance(value, list):
                    raise TypeError(f"{key} must be a list")
                sweeps[target] = [_coerce(key, v, FIELD_TYPES[target]) for v in value]
            elif key in FIELD_TYPES:
                base[key] = _coerce(key, value, FIELD_TYPES[key])
            else:
                raise ConfigError(f"unknown key {key!r}", source, line)
        except TypeError as exc:
            raise ConfigError(str(exc), source, line) from None

    cfg = ExperimentConfig(base, sweeps, source)
    # validate every cell up front so a bad axis value is reported before any run
    for name, target in SWEEP_AXES.items():
        if target in sweeps and target in base:
            raise ConfigError(f"{target} is set both directly and via {name}", source, _key_line(text, name))
    try:
        expand_grid(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc), source) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path))


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(v).replace(".", "p")
    return str(v)


def cell_name(cfg: RunConfig) -> str:
    return f"{cfg.policy}_N{cfg.N}_D{_fmt(cfg.D)}_seed{cfg.seed}"


def expand_grid(cfg: ExperimentConfig) -> list[tuple[str, RunConfig]]:
    """Cartesian product of the sweep axes in the order policy, N, D, seed."""
    base = cfg.base_config()
    axes = [t for t in ("policy", "N", "D", "seed") if t in cfg.sweeps]
    cells = []
    for combo in itertools.product(*(cfg.sweeps[a] for a in axes)):
        rc = base.replace(**dict(zip(axes, combo)))
        cells.append((cell_name(rc), rc))
    names = [n for n, _ in cells]
    if len(set(names)) != len(names):
        raise ValueError("sweep axes contain duplicate values")
    return cells


def dump_config(rc: RunConfig) -> str:
    """The flat TOML form of one resolved cell (round-trips through parse_config)."""
    lines = [f"schema_version = {SCHEMA_VERSION}"]
    for k, v in rc.to_dict().items():
        if v is None:
            continue
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, str):
            s = '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        elif isinstance(v, float) and math.isinf(v):
            s = "inf" if v > 0 else "-inf"
        else:
            s = repr(v)
        lines.append(f"{k} = {s}")
    return "\n".join(lines) + "\n"
