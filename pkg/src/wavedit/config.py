"""Run configuration: schema-checked JSON with materialized defaults.

Every CLI run resolves its parameters against a per-command schema and
echoes the fully-expanded result as ``resolved_config.json`` in the run
directory, so any run is reproducible from that file plus the seed it
contains.  Output paths are deliberately not part of the echoed config:
artifacts must be byte-identical no matter where a run is written.
"""

from __future__ import annotations

import json
from pathlib import Path

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    return payload


def resolve_config(schema: dict, overrides: dict) -> dict:
    """Materialize defaults; reject unknown keys and version mismatches."""
    overrides = dict(overrides)
    version = overrides.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config_version {version!r} unsupported "
                          f"(expected {CONFIG_VERSION})")
    unknown = sorted(set(overrides) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    resolved = {"config_version": CONFIG_VERSION}
    resolved.update(schema)
    for key, value in overrides.items():
        if value is not None:
            resolved[key] = value
    return resolved


def echo_config(resolved: dict, out_dir) -> Path:
    path = Path(out_dir) / "resolved_config.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
