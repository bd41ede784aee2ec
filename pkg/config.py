"""
Configuration loading
Human-readable key-value config files plus SWANN_* environment overrides

File format (one setting per line, '#' starts a comment):

    attitude.motor_tau=0.02
    attitude.inertia=0.007,0.007,0.012
    train.total_steps=300000

Environment variables override file values: SWANN_TRAIN_TOTAL_STEPS=50000
maps to train.total_steps, SWANN_ATTITUDE_DOMAIN_GAP_INERTIA_SCALE to
attitude.domain_gap.inertia_scale. A .env file in the working directory is honoured.
"""

import dataclasses
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar

import structlog
from dotenv import dotenv_values, load_dotenv

T = TypeVar("T")

ENV_PREFIX = "SWANN_"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}
# nested config blocks whose names contain underscores
NESTED_FIELDS = ("domain_gap",)


class ConfigError(ValueError):
    """Raised for unreadable config files, unknown keys or bad values"""


def configure_logging(verbose: bool = False):
    """Configure structlog once for a CLI entry point"""
    level = logging.DEBUG if verbose else logging.INFO
    structlog.configure(
        wrapper_class=structlog.make_filtering_bound_logger(level),
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="%H:%M:%S"),
            structlog.dev.ConsoleRenderer(colors=False),
        ],
    )


def load_values(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, str]:
    """
    Collect raw key-value settings

    Args:
        path: Optional config file (KEY=VALUE lines)
        overrides: Optional explicit settings, applied last

    Returns:
        Flat dictionary of 'section.field' -> string value
    """
    values: Dict[str, str] = {}

    if path:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        for key, value in dotenv_values(config_path).items():
            if value is not None:
                values[key.strip().lower()] = value.strip()

    load_dotenv()
    for key, value in os.environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        section, _, field = key[len(ENV_PREFIX):].lower().partition("_")
        if not field:
            continue
        for nested in NESTED_FIELDS:
            if field.startswith(nested + "_"):
                field = f"{nested}.{field[len(nested) + 1:]}"
                break
        values[f"{section}.{field}"] = value

    for key, value in (overrides or {}).items():
        values[key.lower()] = value if isinstance(value, str) else _format(value)

    return values


def _format(value: Any) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _coerce(raw: str, default: Any, key: str) -> Any:
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return _integral(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [item.strip() for item in raw.split(",") if item.strip()]
            element = type(default[0]) if default else float
            return tuple(_integral(item) if element is int else element(item) for item in items)
        return raw
    except ValueError:
        raise ConfigError(f"Bad value for {key}: {raw!r}")


def _integral(raw: str) -> int:
    """Integer from 300000 or 3e5; fractional values are rejected"""
    value = float(raw)
    if not value.is_integer():
        raise ValueError(raw)
    return int(value)


def _field_default(field: dataclasses.Field) -> Any:
    if field.default is not dataclasses.MISSING:
        return field.default
    if field.default_factory is not dataclasses.MISSING:
        return field.default_factory()
    return None


def build(cls: Type[T], values: Mapping[str, str], section: str, base: Optional[T] = None) -> T:
    """
    Build a config dataclass from 'section.field' values

    Args:
        cls: Dataclass type to build
        values: Raw settings from load_values()
        section: Key prefix, e.g. 'attitude'
        base: Optional instance supplying defaults instead of the class defaults

    Returns:
        New dataclass instance
    """
    fields = {f.name: f for f in dataclasses.fields(cls)}
    prefix = f"{section}."
    nested = {name for name, f in fields.items() if dataclasses.is_dataclass(_field_default(f))}

    for key in values:
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):].split(".")[0]
        if name not in fields:
            raise ConfigError(f"Unknown setting {key}")

    kwargs: Dict[str, Any] = {}
    for name, field in fields.items():
        default = getattr(base, name) if base is not None else _field_default(field)
        if name in nested:
            kwargs[name] = build(type(default), values, f"{section}.{name}", base=default)
            continue
        key = f"{section}.{name}"
        kwargs[name] = _coerce(values[key], default, key) if key in values else default

    return cls(**kwargs)


def to_dict(instance: Any) -> Dict[str, Any]:
    """Plain-JSON view of a config dataclass"""
    return json.loads(json.dumps(dataclasses.asdict(instance), default=str))


def config_hash(resolved: Mapping[str, Any]) -> str:
    """Short SHA-256 of a resolved config, stable across runs"""
    payload = json.dumps(resolved, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]
