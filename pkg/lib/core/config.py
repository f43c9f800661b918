"""
key=value configuration files.

Blank lines and lines starting with '#' are ignored. Values stay strings;
typed config dataclasses coerce them through coerce_fields().
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Dict, Mapping

from lib.core.errors import ConfigError


def parse_kv(text: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_kv_file(path) -> Dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_kv(text)


def coerce_fields(cls, values: Mapping[str, Any]) -> Dict[str, Any]:
    """Convert string values to the declared field types of dataclass `cls`."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    out: Dict[str, Any] = {}
    for key, value in values.items():
        name = key.replace("-", "_")
        if name not in fields:
            raise ConfigError(f"unknown {cls.__name__} key: {key}")
        default = getattr(cls, name, None)
        if fields[name].default is not dataclasses.MISSING:
            default = fields[name].default
        out[name] = _coerce(name, value, default)
    return out


def _coerce(name: str, value: Any, default: Any) -> Any:
    if not isinstance(value, str):
        return value
    try:
        if isinstance(default, bool):
            return value.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc
    return value
