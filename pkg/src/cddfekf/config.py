"""Experiment configuration files (YAML) and command-line overrides."""

from __future__ import annotations

import os
from dataclasses import fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError
from .harness import ExperimentConfig

SEED_ENV = "CDDFEKF_SEED"
KEYS = tuple(f.name for f in fields(ExperimentConfig))
_INT_KEYS = ("mc_runs", "l_em", "l_it", "master_seed")
_FLOAT_KEYS = ("horizon", "sample_period", "alpha", "truth_step")
_STR_KEYS = ("turn_rate_units", "truth_scheme", "truth_initial")


def _coerce(key: str, value: Any, line: Optional[int]) -> Any:
    try:
        if key in _INT_KEYS:
            if isinstance(value, bool) or isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if key in _FLOAT_KEYS:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if key in _STR_KEYS:
            if not isinstance(value, str):
                raise TypeError
            return value
        if key == "gamma_list":
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return tuple(float(v) for v in value)
        if key == "filters":
            if isinstance(value, str):
                value = [value]
            if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
                raise TypeError
            return tuple(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r}", key, line) from None
    raise ConfigError("unknown key", key, line)


def parse_mapping(text: str) -> tuple[dict, dict]:
    """Parse YAML text into ``(values, line_of_key)``; lines are 1-based."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", line=mark.line + 1 if mark else None)
    if root is None:
        return {}, {}
    if not isinstance(root, yaml.MappingNode) or not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=root.start_mark.line + 1)
    lines = {}
    for key_node, _ in root.value:
        key = key_node.value
        if key in lines:
            raise ConfigError("duplicate key", key, key_node.start_mark.line + 1)
        lines[key] = key_node.start_mark.line + 1
    return {str(k): v for k, v in data.items()}, lines


def build_config(
    values: Optional[dict] = None, lines: Optional[dict] = None, env: Optional[dict] = None
) -> ExperimentConfig:
    """Make a validated config from raw values; unknown keys are rejected.

    ``CDDFEKF_SEED`` in ``env`` (default ``os.environ``) overrides
    ``master_seed``.
    """
    values = dict(values or {})
    lines = lines or {}
    env = os.environ if env is None else env
    kwargs = {}
    for key, value in values.items():
        if key not in KEYS:
            raise ConfigError("unknown key", key, lines.get(key))
        kwargs[key] = _coerce(key, value, lines.get(key))
    seed = env.get(SEED_ENV)
    if seed is not None and seed != "":
        try:
            kwargs["master_seed"] = int(seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {seed!r}", SEED_ENV) from None
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError as exc:
        if exc.line is None and exc.key in lines:
            raise ConfigError(str(exc).rsplit(" (", 1)[0], exc.key, lines[exc.key]) from None
        raise


def load_config(path=None, overrides: Optional[dict] = None, env: Optional[dict] = None) -> ExperimentConfig:
    """Read a YAML config file (or none) and apply ``overrides`` on top."""
    values, lines = {}, {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {p}: {exc.strerror}") from None
        values, lines = parse_mapping(text)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
            lines.pop(key, None)
    return build_config(values, lines, env)
