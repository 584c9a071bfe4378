"""Experiment config files: flat TOML, one ``key = value`` per line.

Strings are quoted (``target = "ring8"``), lists use brackets, ``#`` starts a
comment. Tables are rejected; every key maps onto an
:class:`~ndiv.trainer.ExperimentConfig` field.
"""
from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

from ndiv.trainer import ConfigError, ExperimentConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

REQUIRED_KEYS = ("target", "variant", "max_iters", "seeds")


def parse_config_text(text: str) -> dict:
    try:
        values = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"line {getattr(e, 'lineno', '?')}: {e}") from None
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config must be flat; found table(s) {', '.join(nested)}")
    return values


def load_config(path) -> tuple:
    """Return ``(ExperimentConfig, sha256 of the file bytes)``."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError(f"{path}: not UTF-8 ({e})") from e
    values = parse_config_text(text)
    missing = [k for k in REQUIRED_KEYS if k not in values]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    try:
        cfg = ExperimentConfig.from_dict(values)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    return cfg, hashlib.sha256(raw).hexdigest()


def dump_config(cfg: ExperimentConfig) -> str:
    """Flat TOML for ``cfg``; unset optional fields are left out."""
    lines = []
    for k, v in cfg.to_dict().items():
        if v is not None:
            lines.append(f"{k} = {json.dumps(v)}\n")
    return "".join(lines)
