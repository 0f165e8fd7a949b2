"""Run configuration: a single versioned JSON document, every field also a CLI flag.

Nested sections map to prefixed flags, e.g. ``trajectory.radius`` is
``--trajectory-radius`` and ``filter.delay_std`` is ``--filter-delay-std``.
Precedence: built-in defaults < ``--config`` file < individual flags.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..runner import FilterConfig, validate_filter_name
from ..simulator import InitConfig, SensorConfig, TrajectoryConfig
from ..twobody import TwoBodyConfig

__all__ = ["SCHEMA_VERSION", "ConfigError", "RunConfig", "SECTIONS", "load_config", "dump_config"]

SCHEMA_VERSION = 1
SCENARIOS = ("simulate", "replay", "twobody")


class ConfigError(ValueError):
    """Invalid configuration (exit code 1)."""


SECTIONS = {
    "trajectory": TrajectoryConfig,
    "sensor": SensorConfig,
    "init": InitConfig,
    "filter": FilterConfig,
    "twobody": TwoBodyConfig,
}


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "simulate"
    filters: tuple = ("eqf", "ekf-online")
    out: str = "galins_out"
    runs: int = 50
    base_seed: int = 0
    delays_ms: tuple = ()
    log: str | None = None
    per_run_csv: bool = True
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    init: InitConfig = field(default_factory=InitConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    twobody: TwoBodyConfig = field(default_factory=TwoBodyConfig)

    def validate(self) -> RunConfig:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {', '.join(SCENARIOS)}")
        if self.scenario == "replay" and not self.log:
            raise ConfigError("replay requires a log directory (--log)")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if not self.filters:
            raise ConfigError("at least one filter is required")
        for f in self.filters:
            try:
                validate_filter_name(f)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        for d in self.delays_ms:
            if not d >= 0:
                raise ConfigError("delays must be non-negative")
        return self

    def delays(self) -> list[float]:
        """Scenario delays in seconds; falls back to the sensor delay."""
        if self.delays_ms:
            return [d / 1000.0 for d in self.delays_ms]
        return [self.sensor.delay]

    def to_dict(self, echo: bool = False) -> dict:
        """``echo=True`` drops the output directory so results do not depend on where they land."""
        d = {"schema_version": SCHEMA_VERSION}
        for f in fields(self):
            if echo and f.name == "out":
                continue
            v = getattr(self, f.name)
            d[f.name] = _plain(dataclasses.asdict(v)) if dataclasses.is_dataclass(v) else _plain(v)
        return d


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _coerce(cls, name, value, default):
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{cls.__name__}.{name} must be a list")
        if default and len(value) != len(default):
            raise ConfigError(f"{cls.__name__}.{name} must have {len(default)} entries")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{cls.__name__}.{name} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{cls.__name__}.{name} must be an integer")
        return int(value)
    if isinstance(default, float) or default is None:
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{cls.__name__}.{name} must be a number")
        return float(value)
    return value


def _build(cls, data: dict, base=None):
    base = base if base is not None else cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section for {cls.__name__} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} field(s): {', '.join(sorted(unknown))}")
    kw = {k: _coerce(cls, k, v, getattr(base, k)) for k, v in data.items()}
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


def from_dict(data: dict, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    kw = {}
    top = {f.name: f for f in fields(RunConfig)}
    for k, v in data.items():
        if k not in top:
            raise ConfigError(f"unknown configuration key {k!r}")
        if k in SECTIONS:
            kw[k] = _build(SECTIONS[k], v, getattr(base, k))
        elif k in ("filters", "delays_ms"):
            if isinstance(v, str) or not isinstance(v, (list, tuple)):
                raise ConfigError(f"{k} must be a list")
            kw[k] = tuple(float(x) for x in v) if k == "delays_ms" else tuple(v)
        else:
            kw[k] = _coerce(RunConfig, k, v, getattr(base, k)) if getattr(base, k) is not None else v
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file {p} not found") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    return from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=False) + "\n"


def flag_name(section: str | None, name: str) -> str:
    stem = name.replace("_", "-")
    return f"--{section}-{stem}" if section else f"--{stem}"


def section_fields():
    """(section, field name, default) for every nested configuration field."""
    for section, cls in SECTIONS.items():
        base = cls()
        for f in fields(cls):
            yield section, f.name, getattr(base, f.name)
