"""User and project configuration.

Two levels:

- **User config** (`$XDG_CONFIG_HOME/atc2/config.toml`) holds machine-wide
  defaults: worker count, callback retry policy, where trained models live.
- **Project config** (`.atc2.toml` in the project root) holds how this corpus
  is processed: boosting discount, pipeline and settings files, lifecycle ages.

The project file overrides the user file key by key; command-line flags
override both. Relative paths resolve against the directory of the file that
declares them.
"""

from __future__ import annotations

import tomllib
from dataclasses import dataclass, field
from os import environ
from pathlib import Path
from typing import Any

from .textnorm import MODES

APP_NAME = "atc2"
PROJECT_CONFIG_NAME = ".atc2.toml"

SECTIONS: dict[str, frozenset[str]] = {
    "boost": frozenset({"discount", "mode"}),
    "pipeline": frozenset({"workers", "config", "settings"}),
    "lifecycle": frozenset({"stale_days", "delete_days"}),
    "callbacks": frozenset({"retries", "timeout_s", "backoff_s"}),
    "paths": frozenset({"grammar", "airlines", "eld_model", "role_model"}),
}
_PATH_KEYS = frozenset({("pipeline", "config"), ("pipeline", "settings")}) | {
    ("paths", k) for k in SECTIONS["paths"]
}
BOOST_MODES = MODES


class ConfigError(ValueError):
    pass


def user_config_path() -> Path:
    """Respects XDG_CONFIG_HOME, falls back to the conventional location."""
    base = environ.get("XDG_CONFIG_HOME")
    root = Path(base) if base else Path.home() / ".config"
    return root / APP_NAME / "config.toml"


def _load_toml(path: Path) -> dict[str, Any]:
    if not path.is_file():
        return {}
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class Config:
    discount: float = -0.5
    boost_mode: str = "ngram"
    workers: int = 1
    pipeline_config: Path | None = None
    settings: Path | None = None
    stale_days: float = 30.0
    delete_days: float = 7.0
    callback_retries: int = 3
    callback_timeout_s: float = 5.0
    callback_backoff_s: float = 0.5
    grammar: Path | None = None
    airlines: Path | None = None
    eld_model: Path | None = None
    role_model: Path | None = None
    sources: list[Path] = field(default_factory=list)

    _FIELDS = {
        ("boost", "discount"): "discount",
        ("boost", "mode"): "boost_mode",
        ("pipeline", "workers"): "workers",
        ("pipeline", "config"): "pipeline_config",
        ("pipeline", "settings"): "settings",
        ("lifecycle", "stale_days"): "stale_days",
        ("lifecycle", "delete_days"): "delete_days",
        ("callbacks", "retries"): "callback_retries",
        ("callbacks", "timeout_s"): "callback_timeout_s",
        ("callbacks", "backoff_s"): "callback_backoff_s",
        ("paths", "grammar"): "grammar",
        ("paths", "airlines"): "airlines",
        ("paths", "eld_model"): "eld_model",
        ("paths", "role_model"): "role_model",
    }

    def _apply(self, data: dict[str, Any], path: Path) -> None:
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
        for section, values in data.items():
            if not isinstance(values, dict):
                raise ConfigError(f"{path}: [{section}] must be a table")
            extra = set(values) - SECTIONS[section]
            if extra:
                raise ConfigError(f"{path}: unknown keys in [{section}]: {sorted(extra)}")
            for key, value in values.items():
                if (section, key) in _PATH_KEYS:
                    value = (path.parent / value).resolve()
                setattr(self, self._FIELDS[(section, key)], value)
        self.sources.append(path)

    def validate(self) -> None:
        if self.discount > 0:
            raise ConfigError(f"boost discount must be <= 0, got {self.discount}")
        if self.boost_mode not in BOOST_MODES:
            raise ConfigError(f"boost mode {self.boost_mode!r} not in {sorted(BOOST_MODES)}")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"workers must be a positive integer, got {self.workers!r}")
        if self.stale_days <= 0 or self.delete_days <= 0:
            raise ConfigError("lifecycle ages must be positive")
        if self.callback_retries < 0 or self.callback_timeout_s <= 0 or self.callback_backoff_s < 0:
            raise ConfigError("callback retries and backoff must be >= 0 and timeout > 0")

    @classmethod
    def load(cls, project_root: Path | None = None) -> Config:
        """User config first, then project config overriding it."""
        cfg = cls()
        user_path = user_config_path()
        user = _load_toml(user_path)
        if user:
            cfg._apply(user, user_path)
        if project_root:
            project_path = project_root / PROJECT_CONFIG_NAME
            project = _load_toml(project_path)
            if project:
                cfg._apply(project, project_path)
        cfg.validate()
        return cfg


EXAMPLE_PROJECT_CONFIG = """\
# atc2 project config (.atc2.toml). Paths are relative to this file.

[boost]
# discount = -0.5     # per matched token, <= 0
# mode = "ngram"      # or "unigram"

[pipeline]
# workers = 4
# config = "pipeline.json"
# settings = "settings.json"

[lifecycle]
# stale_days = 30     # untouched queue items older than this are dropped
# delete_days = 7     # dropped items older than this are deleted

[callbacks]
# retries = 3
# timeout_s = 5.0
# backoff_s = 0.5     # the wait before retry n is n times this

[paths]
# eld_model = "models/eld.json"
# role_model = "models/role.json"
"""


def init_config(project_root: Path, force: bool = False) -> Path:
    """Write a commented .atc2.toml; refuses to overwrite unless forced."""
    path = project_root / PROJECT_CONFIG_NAME
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")
    path.write_text(EXAMPLE_PROJECT_CONFIG, encoding="utf-8")
    return path
