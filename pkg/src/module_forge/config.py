"""Runtime configuration: TOML file, overridden by flags and environment.

A config file supplies defaults for paths, thresholds, and endpoint
overrides; command-line flags (and their ``MODULE_FORGE_*`` environment
equivalents) win over the file.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .aliases import DEFAULT_COMMON_MAX, DEFAULT_EXTRA_CAP, DEFAULT_RARE_MAX
from .errors import ModuleForgeError
from .renderer import DEFAULT_RUNTIME


class BadConfig(ModuleForgeError):
    """The config file could not be read or holds the wrong types."""


@dataclass
class Config:
    registry_root: Path = Path("registry")
    cache_root: Path = Path("cache")
    maintainer: str = "modules@localhost"
    runtime: str = DEFAULT_RUNTIME
    arch: str = "amd64"
    rare_max: int = DEFAULT_RARE_MAX
    extra_cap: int = DEFAULT_EXTRA_CAP
    common_max: int = DEFAULT_COMMON_MAX
    jobs: int = 4
    skip_tags: tuple[str, ...] = ()
    base_sets: tuple[Path, ...] = ()
    endpoints: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("rare_max", "extra_cap", "common_max", "jobs"):
            if getattr(self, name) <= 0:
                raise BadConfig(f"{name} must be positive")


_PATH_KEYS = {"registry_root", "cache_root"}
_INT_KEYS = {"rare_max", "extra_cap", "common_max", "jobs"}
_STR_KEYS = {"maintainer", "runtime", "arch"}
_LIST_KEYS = {"skip_tags", "base_sets"}


def load_config(path: Optional[Path] = None, **overrides) -> Config:
    """Build a Config from an optional TOML file plus keyword overrides.

    Overrides with value None are ignored, so unset CLI flags fall through
    to the file and then to the defaults.
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as handle:
                raw = tomllib.load(handle)
        except OSError as exc:
            raise BadConfig(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise BadConfig(f"invalid config {path}: {exc}") from exc
        known = {f.name for f in fields(Config)}
        unknown = set(raw) - known
        if unknown:
            raise BadConfig(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(raw)
    for key, value in overrides.items():
        if value is None or value == ():
            continue
        values[key] = value
    return _coerce(values)


def _coerce(values: dict) -> Config:
    kwargs: dict = {}
    for key, value in values.items():
        if key in _PATH_KEYS:
            kwargs[key] = Path(value)
        elif key in _INT_KEYS:
            if not isinstance(value, int) or isinstance(value, bool):
                raise BadConfig(f"{key} must be an integer")
            kwargs[key] = value
        elif key in _STR_KEYS:
            if not isinstance(value, str):
                raise BadConfig(f"{key} must be a string")
            kwargs[key] = value
        elif key in _LIST_KEYS:
            if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
                raise BadConfig(f"{key} must be a list of strings")
            kwargs[key] = tuple(Path(v) for v in value) if key == "base_sets" else tuple(value)
        elif key == "endpoints":
            if not isinstance(value, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in value.items()
            ):
                raise BadConfig("endpoints must map hosts to URLs")
            kwargs[key] = dict(value)
        else:
            raise BadConfig(f"unknown config key: {key}")
    return Config(**kwargs)
