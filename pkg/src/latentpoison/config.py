"""Plain-text configuration files: one ``key = value`` per line.

Blank lines and ``#`` comments are ignored. Values are coerced to the
type of the matching dataclass field; unknown or malformed keys are
errors, never silently dropped.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(ValueError):
    """A configuration file or key set is invalid."""


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config_file(path) -> dict[str, str]:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), origin=str(path))


def _coerce(key: str, value: str, template) -> object:
    if isinstance(template, bool):
        lowered = value.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"key {key!r}: expected a boolean, got {value!r}")
    try:
        if isinstance(template, int):
            return int(value)
        if isinstance(template, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {exc}") from exc
    return value


def apply_config(instance, values: dict[str, str]):
    """Return a copy of a dataclass instance with string values applied.

    Every key must name a field of the instance; coercion follows the type
    of the field's current value.
    """
    known = {f.name: getattr(instance, f.name) for f in dataclasses.fields(instance)}
    updates = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(
                f"unknown configuration key {key!r}; known keys: {', '.join(sorted(known))}"
            )
        updates[key] = _coerce(key, value, known[key])
    return dataclasses.replace(instance, **updates)
